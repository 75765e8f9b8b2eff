#include "kws/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace kws {

float score_positive(const Model& model, const AudioBuffer& audio) {
  float best = 0.0f;
  for (const auto& s : stream_scores(model, audio)) best = std::max(best, s.smoothed);
  return best;
}

float score_positive(const Model& model, const FeatureSequence& mfcc) {
  float best = 0.0f;
  for (const auto& s : stream_scores(model, mfcc)) best = std::max(best, s.smoothed);
  return best;
}

NegativeTrace score_negative(const Model& model, const AudioBuffer& audio) {
  NegativeTrace trace;
  for (const auto& s : stream_scores(model, audio)) trace.smoothed.push_back(s.smoothed);
  trace.hours = static_cast<double>(audio.samples.size()) / audio.sample_rate / 3600.0;
  return trace;
}

NegativeTrace score_negative_stream(const Model& model, NegativeStream& source, double hours) {
  if (!(hours > 0.0)) throw ConfigError("negative stream length must be positive");
  const auto target = static_cast<std::size_t>(std::ceil(hours * 3600.0 * kSampleRate));
  NegativeTrace trace;
  AudioScorer scorer(model);
  std::size_t samples = 0;
  auto take = [&](const std::vector<StreamScore>& scores) {
    for (const auto& s : scores) trace.smoothed.push_back(s.smoothed);
  };
  while (samples < target) {
    const auto chunk = source.next();
    samples += chunk.samples.size();
    take(scorer.push(chunk.samples));
  }
  take(scorer.finish());
  trace.hours = static_cast<double>(samples) / kSampleRate / 3600.0;
  return trace;
}

std::size_t count_false_alarms(const Model& model, const AudioBuffer& negative, float threshold,
                               double suppression_ms) {
  const auto trace = score_negative(model, negative);
  return count_events(trace.smoothed, threshold,
                      suppression_frames(suppression_ms, model.config.frame_hop_ms));
}

std::vector<float> threshold_grid(std::span<const float> pos_scores, std::size_t grid_points) {
  std::vector<float> grid(pos_scores.begin(), pos_scores.end());
  if (grid_points == 1) grid.push_back(0.0f);
  for (std::size_t i = 0; grid_points > 1 && i < grid_points; ++i) {
    grid.push_back(static_cast<float>(static_cast<double>(i) / static_cast<double>(grid_points - 1)));
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

std::vector<DetPoint> det_curve(std::span<const float> pos_scores,
                                const std::function<std::size_t(float)>& alarms,
                                double neg_hours, std::size_t grid_points) {
  if (pos_scores.empty()) throw DataError("DET curve needs at least one positive score");
  if (!(neg_hours > 0.0)) throw DataError("DET curve needs a positive amount of negative audio");
  std::vector<float> sorted(pos_scores.begin(), pos_scores.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<DetPoint> det;
  for (const float theta : threshold_grid(pos_scores, grid_points)) {
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), theta) - sorted.begin();
    DetPoint p;
    p.threshold = theta;
    p.frr = static_cast<float>(static_cast<double>(below) / static_cast<double>(sorted.size()));
    p.fa_per_hour = static_cast<float>(static_cast<double>(alarms(theta)) / neg_hours);
    det.push_back(p);
  }
  return det;
}

std::vector<DetPoint> det_curve(std::span<const float> pos_scores,
                                std::span<const NegativeTrace> negatives,
                                std::size_t suppression_frames, std::size_t grid_points) {
  double hours = 0.0;
  for (const auto& n : negatives) hours += n.hours;
  auto alarms = [&](float theta) {
    std::size_t total = 0;
    for (const auto& n : negatives) total += count_events(n.smoothed, theta, suppression_frames);
    return total;
  };
  return det_curve(pos_scores, alarms, hours, grid_points);
}

double frr_at_fa(std::span<const DetPoint> det, double target) {
  if (det.empty()) throw DataError("frr_at_fa: empty DET curve");
  std::vector<DetPoint> pts(det.begin(), det.end());
  std::stable_sort(pts.begin(), pts.end(),
                   [](const DetPoint& a, const DetPoint& b) { return a.threshold < b.threshold; });
  for (const auto& p : pts) {
    if (static_cast<double>(p.fa_per_hour) == target) return p.frr;
  }
  if (static_cast<double>(pts.front().fa_per_hour) < target) return pts.front().frr;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double fa_hi = pts[i - 1].fa_per_hour;
    const double fa_lo = pts[i].fa_per_hour;
    if (fa_hi > target && fa_lo < target) {
      const double w = (fa_hi - target) / (fa_hi - fa_lo);
      return pts[i - 1].frr + w * (static_cast<double>(pts[i].frr) - pts[i - 1].frr);
    }
  }
  return pts.back().frr;
}

EvalReport make_report(std::vector<DetPoint> det, std::size_t pos_count, double neg_hours) {
  EvalReport r;
  r.frr_at_1fa = frr_at_fa(det, 1.0);
  r.det = std::move(det);
  r.pos_count = pos_count;
  r.neg_hours = neg_hours;
  return r;
}

std::string summary_line(const EvalReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "frr_at_1fa=%.6f pos=%zu neg_hours=%.4f", report.frr_at_1fa,
                report.pos_count, report.neg_hours);
  return buf;
}

std::string format_det_csv(std::span<const DetPoint> det) {
  std::string out = "threshold,frr,fa_per_hour\n";
  char buf[96];
  for (const auto& p : det) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.threshold, p.frr, p.fa_per_hour);
    out += buf;
  }
  return out;
}

void emit_det(const EvalReport& report, const std::filesystem::path& path) {
  const auto text = format_det_csv(report.det);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<DetPoint> parse_det_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "threshold,frr,fa_per_hour") {
    throw DataError("DET file does not start with the threshold,frr,fa_per_hour header");
  }
  std::vector<DetPoint> det;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    DetPoint p;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%f,%f,%f%c", &p.threshold, &p.frr, &p.fa_per_hour, &tail) != 3) {
      throw DataError("malformed DET row " + std::to_string(row) + ": " + line);
    }
    det.push_back(p);
  }
  return det;
}

std::vector<DetPoint> read_det(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_det_csv(std::string(bytes.begin(), bytes.end()));
}

}  // namespace kws
