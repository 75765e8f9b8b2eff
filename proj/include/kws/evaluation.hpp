#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kws/streaming.hpp"
#include "kws/training.hpp"

namespace kws {

struct DetPoint {
  float threshold = 0.0f;
  float frr = 0.0f;          // fraction of positives scoring below threshold
  float fa_per_hour = 0.0f;  // trigger events per hour of negative audio
  bool operator==(const DetPoint&) const = default;
};

struct EvalReport {
  std::vector<DetPoint> det;
  double frr_at_1fa = 0.0;
  std::size_t pos_count = 0;
  double neg_hours = 0.0;
};

/// Maximum smoothed target score over the utterance, scored through the
/// streaming path including flush. Audio shorter than one analysis window
/// scores 0.
float score_positive(const Model& model, const AudioBuffer& audio);
float score_positive(const Model& model, const FeatureSequence& mfcc);

/// Smoothed scores of keyword-free audio and its duration.
struct NegativeTrace {
  std::vector<float> smoothed;
  double hours = 0.0;
};

NegativeTrace score_negative(const Model& model, const AudioBuffer& audio);

/// Streams at least `hours` of generated negative audio through one
/// continuous AudioScorer.
NegativeTrace score_negative_stream(const Model& model, NegativeStream& source, double hours);

/// Events the streaming detector emits over the audio.
std::size_t count_false_alarms(const Model& model, const AudioBuffer& negative, float threshold,
                               double suppression_ms = kDefaultSuppressionMs);

/// Sorted distinct union of `pos_scores` and `grid_points` uniform points on [0, 1].
std::vector<float> threshold_grid(std::span<const float> pos_scores, std::size_t grid_points = 1001);

/// Sweeps threshold_grid(pos_scores); alarms(theta) counts negative events.
std::vector<DetPoint> det_curve(std::span<const float> pos_scores,
                                const std::function<std::size_t(float)>& alarms,
                                double neg_hours, std::size_t grid_points = 1001);

/// det_curve over precomputed negative traces with the given suppression.
std::vector<DetPoint> det_curve(std::span<const float> pos_scores,
                                std::span<const NegativeTrace> negatives,
                                std::size_t suppression_frames, std::size_t grid_points = 1001);

/// FRR at `target` false alarms per hour. An exact point wins; otherwise FRR
/// is interpolated linearly in fa between the bracketing points. If every
/// point is below the target the lowest-threshold FRR is returned; if every
/// point is above it, the highest-threshold FRR.
double frr_at_fa(std::span<const DetPoint> det, double target_fa_per_hour = 1.0);

EvalReport make_report(std::vector<DetPoint> det, std::size_t pos_count, double neg_hours);

/// `frr_at_1fa=<v> pos=<n> neg_hours=<h>`
std::string summary_line(const EvalReport& report);

/// CSV with header `threshold,frr,fa_per_hour` and one row per point,
/// values printed with 9 significant digits.
std::string format_det_csv(std::span<const DetPoint> det);
void emit_det(const EvalReport& report, const std::filesystem::path& path);
std::vector<DetPoint> parse_det_csv(const std::string& text);
std::vector<DetPoint> read_det(const std::filesystem::path& path);

}  // namespace kws
