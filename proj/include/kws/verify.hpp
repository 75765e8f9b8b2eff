#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "kws/network.hpp"

namespace kws {

struct EquivalenceReport {
  std::size_t seeds = 0;
  double max_deviation = 0.0;  // max |posterior difference| over all seeds and frames
  std::uint64_t worst_seed = 0;
  bool bias_control = false;
};

/// Random SVDF network (random shape, weights and batch-norm statistics) and
/// a random input sequence per seed; compares forward() of the SVDF model
/// with forward() of reduce_svdf_model(). With `bias_control` the reduced
/// model additionally gets nonzero unit biases, which must break equality.
EquivalenceReport verify_equivalence(std::size_t seeds, std::uint64_t base_seed = 0,
                                     bool bias_control = false);

/// A random valid configuration with the given architecture.
ModelConfig random_config(Rng& rng, Arch arch);

/// Model with random weights, biases (s1dcnn only) and batch-norm state.
Model random_model(const ModelConfig& config, Rng& rng);

/// T x F random sequence, T drawn from [min_frames, max_frames].
Matrix random_sequence(Rng& rng, std::size_t rows, std::size_t min_frames, std::size_t max_frames);

}  // namespace kws
