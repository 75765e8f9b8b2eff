#include "kws/verify.hpp"

#include <algorithm>
#include <cmath>

namespace kws {

ModelConfig random_config(Rng& rng, Arch arch) {
  ModelConfig c;
  c.arch = arch;
  c.feature_dim = 1 + rng.below(16);
  c.context = rng.below(6);
  c.depth = 1 + rng.below(7);
  c.filters = 1 + rng.below(32);
  c.memory = 1 + rng.below(12);
  c.classes = 2 + rng.below(3);
  if (arch == Arch::s1dcnn) {
    c.lookahead = rng.below(c.memory);
    c.first = rng.bernoulli(0.5) ? Activation::identity : Activation::relu;
  }
  const Activation seconds[] = {Activation::relu, Activation::sigmoid, Activation::identity};
  c.second = seconds[rng.below(3)];
  c.validate();
  return c;
}

Model random_model(const ModelConfig& config, Rng& rng) {
  Model m = build(config, rng);
  const bool biases = config.arch == Arch::s1dcnn;
  for (auto& b : m.blocks) {
    if (biases) {
      for (auto& v : b.unit.feature_bias) v = static_cast<float>(0.2 * rng.normal());
      for (auto& v : b.unit.time_bias) v = static_cast<float>(0.2 * rng.normal());
    }
    for (auto& v : b.norm.gamma) v = static_cast<float>(rng.uniform(0.5, 1.5));
    for (auto& v : b.norm.shift) v = static_cast<float>(0.2 * rng.normal());
    for (auto& v : b.norm.running_mean) v = static_cast<float>(0.2 * rng.normal());
    for (auto& v : b.norm.running_var) v = static_cast<float>(rng.uniform(0.5, 2.0));
  }
  for (auto& v : m.head.bias) v = static_cast<float>(0.2 * rng.normal());
  return m;
}

Matrix random_sequence(Rng& rng, std::size_t rows, std::size_t min_frames, std::size_t max_frames) {
  const std::size_t frames = min_frames + rng.below(max_frames - min_frames + 1);
  Matrix x(rows, frames);
  for (auto& v : x.values()) v = static_cast<float>(rng.normal());
  return x;
}

EquivalenceReport verify_equivalence(std::size_t seeds, std::uint64_t base_seed, bool bias_control) {
  if (seeds == 0) throw ConfigError("verify-equivalence needs at least one seed");
  EquivalenceReport report;
  report.seeds = seeds;
  report.bias_control = bias_control;
  for (std::size_t i = 0; i < seeds; ++i) {
    const std::uint64_t seed = base_seed + i;
    Rng rng(seed);
    const ModelConfig config = random_config(rng, Arch::svdf);
    const Model svdf = random_model(config, rng);
    Model reduced = reduce_svdf_model(svdf);
    if (bias_control) {
      for (auto& b : reduced.blocks) {
        for (auto& v : b.unit.feature_bias) v = static_cast<float>(rng.uniform(0.5, 1.0));
        for (auto& v : b.unit.time_bias) v = static_cast<float>(rng.uniform(0.5, 1.0));
      }
    }
    const Matrix x = random_sequence(rng, config.input_dim(), 1, 400);
    const auto a = forward(svdf, x);
    const auto b = forward(reduced, x);
    double dev = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      dev = std::max(dev, std::abs(static_cast<double>(a.values()[j]) - b.values()[j]));
    }
    if (dev > report.max_deviation || i == 0) {
      report.max_deviation = std::max(report.max_deviation, dev);
      if (dev >= report.max_deviation) report.worst_seed = seed;
    }
  }
  return report;
}

}  // namespace kws
