#include <algorithm>
#include <cmath>
#include <numbers>

#include "kws/training.hpp"

namespace kws {
namespace {

std::size_t seconds_to_samples(double s) {
  return static_cast<std::size_t>(std::llround(s * kSampleRate));
}

void add_tone(std::vector<float>& out, std::size_t at, double hz, const SynthOptions& o) {
  const std::size_t len = seconds_to_samples(o.tone_ms / 1000.0);
  const std::size_t ramp = std::min(len / 2, seconds_to_samples(o.ramp_ms / 1000.0));
  for (std::size_t i = 0; i < len; ++i) {
    double env = 1.0;
    if (ramp > 0) {
      if (i < ramp) env = static_cast<double>(i) / static_cast<double>(ramp);
      else if (len - 1 - i < ramp) env = static_cast<double>(len - 1 - i) / static_cast<double>(ramp);
    }
    const double phase = 2.0 * std::numbers::pi * hz * static_cast<double>(i) / kSampleRate;
    out[at + i] += static_cast<float>(o.amplitude * env * std::sin(phase));
  }
}

struct Layout {
  std::size_t lead = 0;
  std::size_t body = 0;
  std::size_t tail = 0;
};

Layout draw_layout(Rng& rng, const SynthOptions& o) {
  Layout l;
  l.lead = seconds_to_samples(rng.uniform(o.lead_min_s, o.lead_max_s));
  l.body = seconds_to_samples(o.tone_ms / 1000.0) * o.tone_hz.size();
  l.tail = seconds_to_samples(rng.uniform(o.tail_min_s, o.tail_max_s));
  return l;
}

// Noise at the drawn SNR relative to the tone power, then the utterance gain.
void finish_audio(std::vector<float>& samples, Rng& rng, const SynthOptions& o) {
  const double snr_db = rng.uniform(o.snr_min_db, o.snr_max_db);
  const double signal_power = o.amplitude * o.amplitude / 2.0;
  const double sigma = std::sqrt(signal_power / std::pow(10.0, snr_db / 10.0));
  for (auto& s : samples) s += static_cast<float>(sigma * rng.normal());
  const double gain_db = o.gains_db.empty() ? 0.0 : o.gains_db[rng.below(o.gains_db.size())];
  const auto g = static_cast<float>(std::pow(10.0, gain_db / 20.0));
  for (auto& s : samples) s *= g;
}

Utterance make_positive(Rng& rng, const SynthOptions& o) {
  const Layout l = draw_layout(rng, o);
  std::vector<float> samples(l.lead + l.body + l.tail, 0.0f);
  const std::size_t tone_len = l.body / o.tone_hz.size();
  for (std::size_t i = 0; i < o.tone_hz.size(); ++i) add_tone(samples, l.lead + i * tone_len, o.tone_hz[i], o);
  finish_audio(samples, rng, o);
  Utterance u;
  u.audio.samples = std::move(samples);
  u.is_positive = true;
  u.keyword = SampleSpan{l.lead, l.lead + l.body};
  u.keyword_end_frame = keyword_end_frame_for(l.lead + l.body);
  return u;
}

Utterance make_negative(Rng& rng, const SynthOptions& o) {
  const Layout l = draw_layout(rng, o);
  std::vector<float> samples(l.lead + l.body + l.tail, 0.0f);
  if (o.tone_hz.size() > 1 && rng.bernoulli(o.shuffled_fraction)) {
    // any order except the phrase itself
    std::vector<double> order = o.tone_hz;
    while (order == o.tone_hz) rng.shuffle(order);
    const std::size_t tone_len = l.body / order.size();
    for (std::size_t i = 0; i < order.size(); ++i) add_tone(samples, l.lead + i * tone_len, order[i], o);
  }
  finish_audio(samples, rng, o);
  Utterance u;
  u.audio.samples = std::move(samples);
  return u;
}

}  // namespace

std::vector<Utterance> synth_dataset(std::uint64_t seed, std::size_t n_pos, std::size_t n_neg,
                                     const SynthOptions& options) {
  if (options.tone_hz.empty()) throw ConfigError("synthetic phrase needs at least one tone");
  Rng rng(seed);
  std::vector<Utterance> out;
  out.reserve(n_pos + n_neg);
  for (std::size_t i = 0; i < n_pos; ++i) out.push_back(make_positive(rng, options));
  for (std::size_t i = 0; i < n_neg; ++i) out.push_back(make_negative(rng, options));
  return out;
}

NegativeStream::NegativeStream(std::uint64_t seed, SynthOptions options)
    : rng_(mix64(seed ^ 0x6e65676174697665ULL)), options_(std::move(options)) {}

AudioBuffer NegativeStream::next() { return make_negative(rng_, options_).audio; }

}  // namespace kws
