#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "kws/frontend.hpp"
#include "kws/network.hpp"

namespace kws {

/// Frames averaged into the smoothed score (current frame + 29 past).
inline constexpr std::size_t kScoreWindow = 30;
inline constexpr double kDefaultSuppressionMs = 1000.0;

struct StreamScore {
  std::size_t frame_index = 0;  // logical frame the score belongs to
  float posterior = 0.0f;       // target-class posterior of that frame
  float smoothed = 0.0f;        // mean of the last min(30, available) posteriors
};

/// Trailing mean of min(window, t + 1) values ending at t, summed oldest
/// first in float (the order the streaming path uses).
std::vector<float> smooth_scores(std::span<const float> posteriors,
                                 std::size_t window = kScoreWindow);

/// Frame-synchronous inference over one stream of MFCC frames.
///
/// A ring of 2C+1 raw frames builds the context vector; each block keeps a
/// ring of its K most recent first-stage outputs, so block output t is
/// produced once input t + L has arrived. Buffers start zero-filled, which
/// reproduces the batch zero padding, and the first score is emitted on push
/// number C + L*D + 1. The model must outlive the stream.
class Stream {
 public:
  explicit Stream(const Model& model);

  /// Feeds one F0-dimensional frame; returns the score of logical frame
  /// frames_seen - 1 - (C + L*D) once warm-up is over.
  std::optional<StreamScore> push_frame(std::span<const float> frame);

  /// Drains the C + L*D outstanding frames (zero feature frames for the
  /// context, zero first-stage padding for the blocks). Afterwards the stream
  /// must be reset() before reuse. Flushing a fresh stream returns nothing.
  std::vector<StreamScore> flush();

  void reset();

  std::size_t frames_seen() const noexcept { return frames_seen_; }
  std::size_t scores_emitted() const noexcept { return scores_emitted_; }
  std::size_t warmup_frames() const noexcept { return warmup_; }
  /// Floats held across all ring buffers; constant for the stream lifetime.
  std::size_t state_size() const noexcept;

 private:
  struct BlockState {
    std::vector<float> ring;  // N x K, slot = input index mod K
    std::size_t inputs = 0;
    std::size_t real_inputs = 0;
  };

  using Token = std::optional<std::vector<float>>;  // nullopt = padding

  std::optional<StreamScore> advance(std::size_t block, Token token);
  std::optional<StreamScore> emit(std::span<const float> features);
  Token stacked_context(std::size_t raw_index) const;
  void push_raw(std::span<const float> frame);

  const Model* model_;
  std::size_t warmup_;
  std::size_t frame_dim_;
  std::size_t span_;  // 2C + 1
  std::vector<float> context_;  // span_ x frame_dim_
  std::vector<BlockState> blocks_;
  std::vector<float> scores_;   // ring of kScoreWindow posteriors
  std::size_t frames_seen_ = 0;   // real frames pushed
  std::size_t raw_pushed_ = 0;    // including flush padding
  std::size_t scores_emitted_ = 0;
  bool flushed_ = false;
};

/// Scores a whole utterance the way the stream does, but in one batch:
/// zero-edge context stacking, forward(), then smooth_scores().
std::vector<float> batch_smoothed_scores(const Model& model, const FeatureSequence& mfcc);

struct TriggerEvent {
  std::size_t frame_index = 0;
  double time_ms = 0.0;
  float score = 0.0f;
};

/// Threshold plus refractory window. Fires when score >= threshold and the
/// frame is outside the suppression window of the previous event.
class EventGate {
 public:
  EventGate(float threshold, std::size_t suppression_frames, std::size_t hop_ms = 10);

  std::optional<TriggerEvent> offer(std::size_t frame_index, float score);
  void reset() { next_allowed_ = 0; }

  float threshold() const noexcept { return threshold_; }
  std::size_t suppression_frames() const noexcept { return suppression_; }

 private:
  float threshold_;
  std::size_t suppression_;
  std::size_t hop_ms_;
  std::size_t next_allowed_ = 0;
};

std::size_t suppression_frames(double suppression_ms, std::size_t hop_ms);

/// Number of events the gate produces over a smoothed-score trace.
std::size_t count_events(std::span<const float> smoothed, float threshold,
                         std::size_t suppression_frames);

/// Stream + EventGate.
class Detector {
 public:
  Detector(const Model& model, float threshold,
           double suppression_ms = kDefaultSuppressionMs);

  std::optional<TriggerEvent> push_frame(std::span<const float> frame);
  std::vector<TriggerEvent> flush();

  const Stream& stream() const noexcept { return stream_; }

 private:
  Stream stream_;
  EventGate gate_;
};

/// Audio in, smoothed scores out: FeatureStream feeding a Stream.
class AudioScorer {
 public:
  explicit AudioScorer(const Model& model, const FrameSpec& spec = {});

  std::vector<StreamScore> push(std::span<const float> samples);
  std::vector<StreamScore> finish();

 private:
  FeatureStream features_;
  Stream stream_;
};

/// Smoothed scores of an utterance through the streaming path (push + flush).
std::vector<StreamScore> stream_scores(const Model& model, const AudioBuffer& audio);
std::vector<StreamScore> stream_scores(const Model& model, const FeatureSequence& mfcc);

}  // namespace kws
