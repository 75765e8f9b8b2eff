#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"
#include "kws/bytes.hpp"
#include "kws/frontend.hpp"
#include "support.hpp"

using namespace kws;

namespace {

// O(n^2) DFT power, bins 0..n/2.
std::vector<double> naive_power(std::span<const float> frame, std::size_t n) {
  std::vector<double> out(n / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < frame.size(); ++i) {
      const double a = -2.0 * std::numbers::pi * double(k) * double(i) / double(n);
      acc += double(frame[i]) * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = std::norm(acc);
  }
  return out;
}

// Reference MFCC: naive DFT, triangular mel filters, log, orthonormal DCT-II.
std::vector<double> reference_mfcc(std::span<const float> frame) {
  const std::size_t n = 512, m = 20, q = 13;
  const auto power = naive_power(frame, n);
  auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
  std::vector<double> edge(m + 2);
  for (std::size_t i = 0; i < edge.size(); ++i) edge[i] = hz(mel(8000.0) * double(i) / double(m + 1));
  std::vector<double> logs(m);
  for (std::size_t j = 0; j < m; ++j) {
    double e = 0.0;
    for (std::size_t k = 0; k < power.size(); ++k) {
      const double f = double(k) * 16000.0 / double(n);
      double w = 0.0;
      if (f > edge[j] && f <= edge[j + 1]) w = (f - edge[j]) / (edge[j + 1] - edge[j]);
      else if (f > edge[j + 1] && f < edge[j + 2]) w = (edge[j + 2] - f) / (edge[j + 2] - edge[j + 1]);
      e += w * power[k];
    }
    logs[j] = std::log(std::max(e, 1e-10));
  }
  std::vector<double> c(q);
  for (std::size_t i = 0; i < q; ++i) {
    const double scale = std::sqrt((i == 0 ? 1.0 : 2.0) / double(m));
    for (std::size_t j = 0; j < m; ++j) {
      c[i] += scale * logs[j] * std::cos(std::numbers::pi * double(i) * (double(j) + 0.5) / double(m));
    }
  }
  return c;
}

AudioBuffer noise(Rng& rng, std::size_t n, double scale = 0.1) {
  AudioBuffer a;
  a.samples = test::random_vector<float>(rng, n, scale);
  return a;
}

}  // namespace

TEST_CASE("frame geometry at 16 kHz") {
  FrameSpec spec;
  CHECK(spec.window_samples() == 400);
  CHECK(spec.hop_samples() == 160);
  CHECK(frame_count(399) == 0);
  CHECK(frame_count(400) == 1);
  CHECK(frame_count(16000) == 98);
  CHECK(frame_count(400 + 160 * 7 + 159) == 8);
}

TEST_CASE("hamming window values") {
  const auto w = hamming_window(400);
  CHECK(w[0] == doctest::Approx(0.08));
  CHECK(w[399] == doctest::Approx(0.08));
  for (std::size_t i = 0; i < 200; ++i) CHECK(w[i] == doctest::Approx(w[399 - i]));
  CHECK(*std::max_element(w.begin(), w.end()) <= 1.0);
}

TEST_CASE("frame_signal windows each hop") {
  Rng rng(2);
  const auto audio = noise(rng, 1000);
  const auto frames = frame_signal(audio);
  REQUIRE(frames.rows() == frame_count(1000));
  const auto w = hamming_window(400);
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    for (std::size_t i = 0; i < 400; i += 37) {
      CHECK(frames(t, i) == static_cast<float>(audio.samples[t * 160 + i] * w[i]));
    }
  }
  AudioBuffer tiny;
  tiny.samples.assign(100, 0.0f);
  CHECK_THROWS_AS(frame_signal(tiny), DataError);
}

TEST_CASE("power spectrum agrees with a direct DFT") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const auto frame = test::random_vector<float>(rng, 400);
    const auto fast = power_spectrum(frame, 512);
    const auto slow = naive_power(frame, 512);
    REQUIRE(fast.size() == 257);
    double scale = 0.0;
    for (double v : slow) scale = std::max(scale, v);
    CHECK(test::max_abs_diff(fast, slow) / scale < 1e-10);
  }
  CHECK_THROWS_AS(power_spectrum(std::vector<float>(10), 12), ShapeError);
}

TEST_CASE("pure tone lands in its bin") {
  std::vector<float> frame(512);
  for (std::size_t i = 0; i < 512; ++i) frame[i] = float(std::sin(2 * std::numbers::pi * 32 * double(i) / 512));
  const auto p = power_spectrum(frame, 512);
  CHECK(std::max_element(p.begin(), p.end()) - p.begin() == 32);
}

TEST_CASE("mfcc matches an independent reference") {
  Rng rng(13);
  const auto audio = noise(rng, 400 + 160 * 4, 0.3);
  const auto windows = frame_signal(audio);
  const auto feats = mfcc(windows);
  REQUIRE(feats.rows() == 13);
  REQUIRE(feats.cols() == 5);
  for (std::size_t t = 0; t < feats.cols(); ++t) {
    const auto ref = reference_mfcc(windows.row(t));
    for (std::size_t q = 0; q < 13; ++q) CHECK(feats(q, t) == doctest::Approx(ref[q]).epsilon(1e-5));
  }
}

TEST_CASE("gain shifts only c0, by 2 sqrt(M) ln g") {
  Rng rng(17);
  const auto audio = noise(rng, 4000, 0.2);
  const double gain_db = -20.0;
  const auto a = extract_features(audio);
  const auto b = extract_features(apply_gain(audio, gain_db));
  const double shift = 2.0 * std::sqrt(20.0) * std::log(std::pow(10.0, gain_db / 20.0));
  for (std::size_t t = 0; t < a.cols(); ++t) {
    CHECK(b(0, t) - a(0, t) == doctest::Approx(shift).epsilon(1e-3));
    for (std::size_t q = 1; q < 13; ++q) CHECK(std::abs(b(q, t) - a(q, t)) < 1e-3);
  }
}

TEST_CASE("apply_gain scales without clipping") {
  AudioBuffer a;
  a.samples = {0.5f, -0.9f};
  const auto b = apply_gain(a, 20.0);
  CHECK(b.samples[0] == doctest::Approx(5.0));
  CHECK(b.samples[1] == doctest::Approx(-9.0));
}

TEST_CASE("context stacking against explicit indexing") {
  Rng rng(4);
  const auto feats = test::random_matrix<float>(rng, 3, 9);
  for (const auto mode : {EdgeMode::replicate, EdgeMode::zero}) {
    for (std::size_t c : {0u, 1u, 2u, 5u}) {
      const auto out = concat_context(feats, c, mode);
      REQUIRE(out.rows() == 3 * (2 * c + 1));
      REQUIRE(out.cols() == 9);
      for (std::size_t t = 0; t < 9; ++t) {
        for (std::size_t j = 0; j < 2 * c + 1; ++j) {
          const long src = long(t) + long(j) - long(c);
          for (std::size_t f = 0; f < 3; ++f) {
            float expect;
            if (src >= 0 && src < 9) expect = feats(f, std::size_t(src));
            else if (mode == EdgeMode::zero) expect = 0.0f;
            else expect = feats(f, src < 0 ? 0 : 8);
            CHECK(out(j * 3 + f, t) == expect);
          }
        }
      }
    }
  }
}

TEST_CASE("feature stream is bit-identical to the batch frontend") {
  Rng rng(21);
  const auto audio = noise(rng, 16000 + 123, 0.3);
  const auto batch = extract_features(audio);
  FeatureStream stream;
  std::vector<std::vector<float>> frames;
  std::size_t at = 0;
  while (at < audio.samples.size()) {
    const std::size_t n = std::min<std::size_t>(1 + rng.below(700), audio.samples.size() - at);
    for (auto& f : stream.push(std::span(audio.samples).subspan(at, n))) frames.push_back(std::move(f));
    at += n;
  }
  REQUIRE(frames.size() == batch.cols());
  for (std::size_t t = 0; t < frames.size(); ++t) CHECK(frames[t] == batch.column(t));
}

TEST_CASE("wav round trip within one quantisation step") {
  Rng rng(8);
  AudioBuffer audio;
  for (int i = 0; i < 1234; ++i) audio.samples.push_back(static_cast<float>(rng.uniform(-0.99, 0.99)));
  audio.samples.push_back(1.5f);  // clipped
  const auto back = decode_wav(encode_wav(audio));
  REQUIRE(back.samples.size() == audio.samples.size());
  CHECK(back.sample_rate == 16000);
  for (std::size_t i = 0; i + 1 < audio.samples.size(); ++i) {
    CHECK(std::abs(back.samples[i] - audio.samples[i]) <= 0.5f / 32768.0f + 1e-7f);
  }
  CHECK(back.samples.back() == doctest::Approx(32767.0 / 32768.0));
  CHECK(encode_wav(back) == encode_wav(decode_wav(encode_wav(back))));
}

TEST_CASE("wav decoder skips unknown chunks") {
  AudioBuffer a;
  a.samples = {0.25f, -0.5f};
  auto bytes = encode_wav(a);
  // insert a LIST chunk with an odd size (padded) before "data"
  const std::vector<std::uint8_t> extra{'L', 'I', 'S', 'T', 3, 0, 0, 0, 'a', 'b', 'c', 0};
  bytes.insert(bytes.begin() + 36, extra.begin(), extra.end());
  const auto back = decode_wav(bytes);
  CHECK(back.samples == a.samples);
}

TEST_CASE("wav decoder rejects unsupported formats with offsets") {
  AudioBuffer a;
  a.samples = {0.1f, 0.2f};
  const auto good = encode_wav(a);
  auto stereo = good;
  stereo[22] = 2;
  CHECK_THROWS_AS(decode_wav(stereo), FormatError);
  try {
    decode_wav(stereo);
  } catch (const FormatError& e) {
    CHECK(e.offset() == 22);
  }
  auto rate = good;
  rate[24] = 0x40;  // 8000 Hz
  rate[25] = 0x1f;
  CHECK_THROWS_AS(decode_wav(rate), FormatError);
  auto bits = good;
  bits[34] = 8;
  CHECK_THROWS_AS(decode_wav(bits), FormatError);
  auto magic = good;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_wav(magic), FormatError);
  const std::vector<std::uint8_t> truncated(good.begin(), good.end() - 3);
  CHECK_THROWS_AS(decode_wav(truncated), FormatError);
  CHECK_THROWS_AS(decode_wav(std::vector<std::uint8_t>(good.begin(), good.begin() + 20)), FormatError);
}

TEST_CASE("wav files on disk") {
  const auto dir = test::scratch_dir("wav");
  AudioBuffer a;
  a.samples = {0.0f, 0.5f, -0.5f};
  write_wav(dir / "a.wav", a);
  CHECK(read_wav(dir / "a.wav").samples == a.samples);
  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), IoError);
  write_file_bytes(dir / "bad.wav", std::vector<std::uint8_t>{'R', 'I', 'F', 'F'});
  try {
    read_wav(dir / "bad.wav");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("bad.wav") != std::string::npos);
  }
}

TEST_CASE("raw pcm decoding") {
  const std::vector<std::uint8_t> bytes{0x00, 0x40, 0x00, 0x80, 0xff, 0x7f, 0x12};
  const auto s = decode_pcm16(bytes);
  REQUIRE(s.size() == 3);
  CHECK(s[0] == 0.5f);
  CHECK(s[1] == -1.0f);
  CHECK(s[2] == 32767.0f / 32768.0f);
}

TEST_CASE("feature dump round trip and corruption") {
  Rng rng(30);
  const auto feats = test::random_matrix<float>(rng, 13, 17);
  const auto bytes = encode_features(feats);
  CHECK(bytes.size() == 4 + 1 + 8 + 13 * 17 * 4);
  CHECK(decode_features(bytes) == feats);
  // frame-major: second value on disk is coefficient 1 of frame 0
  ByteReader r(bytes);
  r.skip(13, "header");
  r.f32("x");
  CHECK(r.f32("y") == feats(1, 0));

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_features(trailing), FormatError);
  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(decode_features(version), FormatError);
  CHECK_THROWS_AS(decode_features(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 1)), FormatError);
}
