#include "kws/streaming.hpp"

#include <algorithm>
#include <cmath>

namespace kws {

std::vector<float> smooth_scores(std::span<const float> posteriors, std::size_t window) {
  if (window == 0) throw ConfigError("smoothing window must be >= 1");
  std::vector<float> out(posteriors.size());
  for (std::size_t t = 0; t < posteriors.size(); ++t) {
    const std::size_t lo = t + 1 >= window ? t + 1 - window : 0;
    float sum = 0.0f;
    for (std::size_t i = lo; i <= t; ++i) sum += posteriors[i];
    out[t] = sum / static_cast<float>(t + 1 - lo);
  }
  return out;
}

Stream::Stream(const Model& model) : model_(&model) {
  model.validate();
  const auto& c = model.config;
  if (c.classes < 2) throw ConfigError("streaming detection needs a target and a non-target class");
  warmup_ = c.delay_frames();
  frame_dim_ = c.feature_dim;
  span_ = 2 * c.context + 1;
  context_.assign(span_ * frame_dim_, 0.0f);
  blocks_.resize(c.depth);
  for (auto& b : blocks_) b.ring.assign(c.filters * c.memory, 0.0f);
  scores_.assign(kScoreWindow, 0.0f);
}

void Stream::reset() {
  std::fill(context_.begin(), context_.end(), 0.0f);
  for (auto& b : blocks_) {
    std::fill(b.ring.begin(), b.ring.end(), 0.0f);
    b.inputs = 0;
    b.real_inputs = 0;
  }
  std::fill(scores_.begin(), scores_.end(), 0.0f);
  frames_seen_ = 0;
  raw_pushed_ = 0;
  scores_emitted_ = 0;
  flushed_ = false;
}

std::size_t Stream::state_size() const noexcept {
  std::size_t n = context_.size() + scores_.size();
  for (const auto& b : blocks_) n += b.ring.size();
  return n;
}

void Stream::push_raw(std::span<const float> frame) {
  const std::size_t slot = raw_pushed_ % span_;
  std::copy(frame.begin(), frame.end(), context_.begin() + static_cast<std::ptrdiff_t>(slot * frame_dim_));
  ++raw_pushed_;
}

Stream::Token Stream::stacked_context(std::size_t raw_index) const {
  // Logical frame t = raw_index - C covers raw frames t - C .. t + C.
  const std::size_t context = model_->config.context;
  std::vector<float> stacked(span_ * frame_dim_, 0.0f);
  for (std::size_t j = 0; j < span_; ++j) {
    const auto src = static_cast<std::ptrdiff_t>(raw_index + j) - static_cast<std::ptrdiff_t>(2 * context);
    if (src < 0) continue;
    const std::size_t slot = static_cast<std::size_t>(src) % span_;
    std::copy_n(context_.begin() + static_cast<std::ptrdiff_t>(slot * frame_dim_), frame_dim_,
                stacked.begin() + static_cast<std::ptrdiff_t>(j * frame_dim_));
  }
  return stacked;
}

std::optional<StreamScore> Stream::advance(std::size_t index, Token token) {
  auto& state = blocks_[index];
  const auto& block = model_->blocks[index];
  const auto& unit = block.unit;
  const bool svdf = model_->config.arch == Arch::svdf;
  const std::size_t filters = unit.filters();
  const std::size_t k_len = unit.kernel();
  const std::size_t lookahead = unit.lookahead;

  const std::size_t s = state.inputs++;
  const std::size_t slot = s % k_len;
  if (token) {
    const auto& x = *token;
    for (std::size_t n = 0; n < filters; ++n) {
      const auto w = unit.feature_weights.row(n);
      float acc = 0.0f;
      for (std::size_t f = 0; f < w.size(); ++f) acc += w[f] * x[f];
      if (!svdf) acc += unit.feature_bias[n];
      state.ring[n * k_len + slot] = svdf ? acc : activate(unit.first, acc);
    }
    ++state.real_inputs;
  } else {
    for (std::size_t n = 0; n < filters; ++n) state.ring[n * k_len + slot] = 0.0f;
  }

  if (s < lookahead) return std::nullopt;
  const std::size_t out_index = s - lookahead;
  const bool last = index + 1 == blocks_.size();
  if (out_index >= state.real_inputs) {
    return last ? std::nullopt : advance(index + 1, std::nullopt);
  }

  std::vector<float> y(filters);
  for (std::size_t n = 0; n < filters; ++n) {
    const auto w = unit.time_weights.row(n);
    const float* ring = state.ring.data() + n * k_len;
    float acc = 0.0f;
    // Tap k reads first-stage output s - K + 1 + k.
    for (std::size_t k = 0; k < k_len; ++k) {
      if (s + k + 1 < k_len) continue;
      acc += w[k] * ring[(s + k + 1 - k_len) % k_len];
    }
    if (!svdf) acc += unit.time_bias[n];
    const float a = activate(unit.second, acc);
    const float scale = block.norm.gamma[n] / std::sqrt(block.norm.running_var[n] + block.norm.eps);
    y[n] = scale * (a - block.norm.running_mean[n]) + block.norm.shift[n];
  }
  return last ? emit(y) : advance(index + 1, std::move(y));
}

std::optional<StreamScore> Stream::emit(std::span<const float> features) {
  const auto& head = model_->head;
  std::vector<float> logits(head.outputs());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const auto w = head.weights.row(c);
    float acc = 0.0f;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * features[i];
    logits[c] = acc + head.bias[c];
  }
  const auto post = softmax<float>(logits);

  StreamScore score;
  score.frame_index = scores_emitted_;
  score.posterior = post[1];
  scores_[scores_emitted_ % kScoreWindow] = score.posterior;
  ++scores_emitted_;
  const std::size_t count = std::min(scores_emitted_, kScoreWindow);
  float sum = 0.0f;
  for (std::size_t j = count; j-- > 0;) sum += scores_[(scores_emitted_ - 1 - j) % kScoreWindow];
  score.smoothed = sum / static_cast<float>(count);
  return score;
}

std::optional<StreamScore> Stream::push_frame(std::span<const float> frame) {
  if (flushed_) throw StateError("stream was flushed; reset() before pushing more frames");
  if (frame.size() != frame_dim_) {
    throw ShapeError("push_frame: frame has " + std::to_string(frame.size()) +
                     " values, model expects " + std::to_string(frame_dim_));
  }
  push_raw(frame);
  ++frames_seen_;
  const std::size_t raw = raw_pushed_ - 1;
  if (raw < model_->config.context) return std::nullopt;
  return advance(0, stacked_context(raw));
}

std::vector<StreamScore> Stream::flush() {
  std::vector<StreamScore> out;
  if (flushed_) return out;
  flushed_ = true;
  if (frames_seen_ == 0) return out;
  const auto& c = model_->config;
  const std::vector<float> zero(frame_dim_, 0.0f);
  for (std::size_t i = 0; i < c.context; ++i) {
    push_raw(zero);
    const std::size_t raw = raw_pushed_ - 1;
    if (raw < c.context || raw - c.context >= frames_seen_) continue;
    if (auto s = advance(0, stacked_context(raw))) out.push_back(*s);
  }
  for (std::size_t i = 0; i < c.lookahead * c.depth; ++i) {
    if (auto s = advance(0, std::nullopt)) out.push_back(*s);
  }
  return out;
}

std::vector<float> batch_smoothed_scores(const Model& model, const FeatureSequence& mfcc) {
  const auto stacked = concat_context(mfcc, model.config.context, EdgeMode::zero);
  const auto posteriors = target_posteriors(model, stacked);
  return smooth_scores(posteriors);
}

EventGate::EventGate(float threshold, std::size_t suppression_frames, std::size_t hop_ms)
    : threshold_(threshold), suppression_(suppression_frames), hop_ms_(hop_ms) {}

std::optional<TriggerEvent> EventGate::offer(std::size_t frame_index, float score) {
  if (!(score >= threshold_) || frame_index < next_allowed_) return std::nullopt;
  next_allowed_ = frame_index + suppression_;
  return TriggerEvent{frame_index, static_cast<double>(frame_index * hop_ms_), score};
}

std::size_t suppression_frames(double suppression_ms, std::size_t hop_ms) {
  if (suppression_ms < 0) throw ConfigError("suppression must be non-negative");
  return static_cast<std::size_t>(std::llround(suppression_ms / static_cast<double>(hop_ms)));
}

std::size_t count_events(std::span<const float> smoothed, float threshold,
                         std::size_t suppression_frames) {
  EventGate gate(threshold, suppression_frames);
  std::size_t events = 0;
  for (std::size_t t = 0; t < smoothed.size(); ++t) {
    if (gate.offer(t, smoothed[t])) ++events;
  }
  return events;
}

Detector::Detector(const Model& model, float threshold, double suppression_ms)
    : stream_(model),
      gate_(threshold, suppression_frames(suppression_ms, model.config.frame_hop_ms),
            model.config.frame_hop_ms) {}

std::optional<TriggerEvent> Detector::push_frame(std::span<const float> frame) {
  const auto score = stream_.push_frame(frame);
  if (!score) return std::nullopt;
  return gate_.offer(score->frame_index, score->smoothed);
}

std::vector<TriggerEvent> Detector::flush() {
  std::vector<TriggerEvent> events;
  for (const auto& s : stream_.flush()) {
    if (auto e = gate_.offer(s.frame_index, s.smoothed)) events.push_back(*e);
  }
  return events;
}

AudioScorer::AudioScorer(const Model& model, const FrameSpec& spec)
    : features_(spec), stream_(model) {}

std::vector<StreamScore> AudioScorer::push(std::span<const float> samples) {
  std::vector<StreamScore> out;
  for (const auto& frame : features_.push(samples)) {
    if (auto s = stream_.push_frame(frame)) out.push_back(*s);
  }
  return out;
}

std::vector<StreamScore> AudioScorer::finish() { return stream_.flush(); }

std::vector<StreamScore> stream_scores(const Model& model, const AudioBuffer& audio) {
  AudioScorer scorer(model);
  auto out = scorer.push(audio.samples);
  auto rest = scorer.finish();
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

std::vector<StreamScore> stream_scores(const Model& model, const FeatureSequence& mfcc) {
  Stream stream(model);
  std::vector<StreamScore> out;
  for (std::size_t t = 0; t < mfcc.cols(); ++t) {
    if (auto s = stream.push_frame(mfcc.column(t))) out.push_back(*s);
  }
  auto rest = stream.flush();
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace kws
