#include "kws/frontend.hpp"

#include <cmath>
#include <complex>
#include <numbers>

namespace kws {

std::size_t FrameSpec::window_samples(std::uint32_t sample_rate) const {
  return static_cast<std::size_t>(std::lround(window_ms * sample_rate / 1000.0));
}

std::size_t FrameSpec::hop_samples(std::uint32_t sample_rate) const {
  return static_cast<std::size_t>(std::lround(hop_ms * sample_rate / 1000.0));
}

void FrameSpec::validate() const {
  if (!(hop_ms > 0.0) || window_ms < hop_ms) {
    throw ConfigError("frame spec requires window_ms >= hop_ms > 0");
  }
  if (num_coeffs < 1) throw ConfigError("frame spec requires num_coeffs >= 1");
}

AudioBuffer apply_gain(const AudioBuffer& audio, double p_db) {
  const double scale = std::pow(10.0, p_db / 20.0);
  AudioBuffer out = audio;
  for (auto& s : out.samples) s = static_cast<float>(s * scale);
  return out;
}

std::size_t frame_count(std::size_t num_samples, const FrameSpec& spec,
                        std::uint32_t sample_rate) {
  const std::size_t window = spec.window_samples(sample_rate);
  const std::size_t hop = spec.hop_samples(sample_rate);
  if (num_samples < window) return 0;
  return (num_samples - window) / hop + 1;
}

std::vector<double> hamming_window(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n - 1));
  }
  return w;
}

Matrix frame_signal(const AudioBuffer& audio, const FrameSpec& spec) {
  spec.validate();
  if (audio.sample_rate == 0) throw DataError("sample rate must be positive");
  const std::size_t window = spec.window_samples(audio.sample_rate);
  const std::size_t hop = spec.hop_samples(audio.sample_rate);
  const std::size_t frames = frame_count(audio.samples.size(), spec, audio.sample_rate);
  if (frames == 0) {
    throw DataError("audio has " + std::to_string(audio.samples.size()) +
                    " samples, shorter than one " + std::to_string(window) +
                    "-sample window");
  }
  const auto taper = hamming_window(window);
  Matrix out(frames, window);
  for (std::size_t t = 0; t < frames; ++t) {
    auto row = out.row(t);
    const float* src = audio.samples.data() + t * hop;
    for (std::size_t i = 0; i < window; ++i) {
      row[i] = static_cast<float>(src[i] * taper[i]);
    }
  }
  return out;
}

namespace {

void fft_in_place(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  // twiddles e^{-2 pi i k / n}, k < n/2, cached per size
  thread_local std::size_t table_n = 0;
  thread_local std::vector<double> wr, wi;
  if (table_n != n) {
    wr.resize(n / 2);
    wi.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      wr[k] = std::cos(angle);
      wi[k] = std::sin(angle);
    }
    table_n = n;
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    // written out: std::complex operator* goes through the NaN-aware slow path
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const double c = wr[k * stride], d = wi[k * stride];
        const auto u = a[i + k];
        const auto x = a[i + k + half];
        const double vr = x.real() * c - x.imag() * d;
        const double vi = x.real() * d + x.imag() * c;
        a[i + k] = {u.real() + vr, u.imag() + vi};
        a[i + k + half] = {u.real() - vr, u.imag() - vi};
      }
    }
  }
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

std::vector<double> power_spectrum(std::span<const float> frame,
                                   std::size_t fft_size) {
  if (fft_size == 0 || (fft_size & (fft_size - 1)) != 0 || frame.size() > fft_size) {
    throw ShapeError("power_spectrum: fft size must be a power of two >= frame length");
  }
  std::vector<std::complex<double>> buf(fft_size);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i];
  fft_in_place(buf);
  std::vector<double> power(fft_size / 2 + 1);
  for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(buf[k]);
  return power;
}

MfccExtractor::MfccExtractor(std::size_t window_samples, MfccOptions options)
    : window_samples_(window_samples),
      fft_size_(next_pow2(window_samples)),
      options_(options) {
  if (window_samples == 0) throw ConfigError("mfcc: empty window");
  if (options.num_coeffs == 0 || options.num_filters == 0 ||
      options.num_coeffs > options.num_filters) {
    throw ConfigError("mfcc: need 1 <= num_coeffs <= num_filters");
  }
  const std::size_t bins = fft_size_ / 2 + 1;
  const std::size_t m = options.num_filters;

  std::vector<double> edges(m + 2);
  const double mel_lo = hz_to_mel(options.low_hz);
  const double mel_hi = hz_to_mel(options.high_hz);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(m + 1));
  }
  filterbank_.assign(m * bins, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const double left = edges[j], centre = edges[j + 1], right = edges[j + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double hz = static_cast<double>(k) * options.sample_rate /
                        static_cast<double>(fft_size_);
      double w = 0.0;
      if (hz > left && hz <= centre) {
        w = (hz - left) / (centre - left);
      } else if (hz > centre && hz < right) {
        w = (right - hz) / (right - centre);
      }
      filterbank_[j * bins + k] = w;
    }
  }

  dct_.assign(options.num_coeffs * m, 0.0);
  for (std::size_t q = 0; q < options.num_coeffs; ++q) {
    const double scale = q == 0 ? std::sqrt(1.0 / static_cast<double>(m))
                                : std::sqrt(2.0 / static_cast<double>(m));
    for (std::size_t j = 0; j < m; ++j) {
      dct_[q * m + j] =
          scale * std::cos(std::numbers::pi * static_cast<double>(q) *
                           (static_cast<double>(j) + 0.5) / static_cast<double>(m));
    }
  }
}

std::vector<float> MfccExtractor::compute(std::span<const float> frame) const {
  if (frame.size() != window_samples_) {
    throw ShapeError("mfcc: frame has " + std::to_string(frame.size()) +
                     " samples, expected " + std::to_string(window_samples_));
  }
  const auto power = power_spectrum(frame, fft_size_);
  const std::size_t bins = power.size();
  const std::size_t m = options_.num_filters;
  std::vector<double> log_energy(m);
  for (std::size_t j = 0; j < m; ++j) {
    double e = 0.0;
    const double* w = filterbank_.data() + j * bins;
    for (std::size_t k = 0; k < bins; ++k) e += w[k] * power[k];
    log_energy[j] = std::log(std::max(e, options_.log_floor));
  }
  std::vector<float> coeffs(options_.num_coeffs);
  for (std::size_t q = 0; q < coeffs.size(); ++q) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += dct_[q * m + j] * log_energy[j];
    coeffs[q] = static_cast<float>(acc);
  }
  return coeffs;
}

FeatureSequence mfcc(const Matrix& windows, const MfccOptions& options) {
  if (windows.rows() == 0) throw DataError("mfcc: no windows");
  const MfccExtractor extractor(windows.cols(), options);
  FeatureSequence out(options.num_coeffs, windows.rows());
  for (std::size_t t = 0; t < windows.rows(); ++t) {
    out.set_column(t, extractor.compute(windows.row(t)));
  }
  return out;
}

FeatureSequence extract_features(const AudioBuffer& audio, const FrameSpec& spec) {
  MfccOptions options;
  options.num_coeffs = spec.num_coeffs;
  options.sample_rate = audio.sample_rate;
  return mfcc(frame_signal(audio, spec), options);
}

FeatureSequence concat_context(const FeatureSequence& feats, std::size_t c,
                               EdgeMode edges) {
  const std::size_t f = feats.rows();
  const std::size_t frames = feats.cols();
  const std::size_t span = 2 * c + 1;
  FeatureSequence out(f * span, frames);
  if (frames == 0) return out;
  const auto last = static_cast<std::ptrdiff_t>(frames) - 1;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < span; ++j) {
      std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(c);
      if (src < 0 || src > last) {
        if (edges == EdgeMode::zero) continue;
        src = std::clamp<std::ptrdiff_t>(src, 0, last);
      }
      for (std::size_t i = 0; i < f; ++i) {
        out(j * f + i, t) = feats(i, static_cast<std::size_t>(src));
      }
    }
  }
  return out;
}

FeatureStream::FeatureStream(const FrameSpec& spec, std::uint32_t sample_rate)
    : spec_(spec),
      window_(spec.window_samples(sample_rate)),
      hop_(spec.hop_samples(sample_rate)),
      extractor_(window_, [&] {
        MfccOptions o;
        o.num_coeffs = spec.num_coeffs;
        o.sample_rate = sample_rate;
        return o;
      }()),
      hamming_(hamming_window(window_)) {
  spec.validate();
  pending_.reserve(window_ + hop_);
}

std::vector<std::vector<float>> FeatureStream::push(std::span<const float> samples) {
  std::vector<std::vector<float>> frames;
  std::vector<float> windowed(window_);
  std::size_t consumed = 0;
  while (consumed < samples.size()) {
    const std::size_t take = std::min(samples.size() - consumed, window_ - pending_.size());
    pending_.insert(pending_.end(), samples.begin() + static_cast<std::ptrdiff_t>(consumed),
                    samples.begin() + static_cast<std::ptrdiff_t>(consumed + take));
    consumed += take;
    if (pending_.size() == window_) {
      for (std::size_t i = 0; i < window_; ++i) {
        windowed[i] = static_cast<float>(pending_[i] * hamming_[i]);
      }
      frames.push_back(extractor_.compute(windowed));
      ++frames_emitted_;
      pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(hop_));
    }
  }
  return frames;
}

}  // namespace kws
