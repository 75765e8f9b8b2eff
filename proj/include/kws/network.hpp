#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kws/layers.hpp"

namespace kws {

enum class Arch : std::uint8_t {
  svdf = 0,    // low-rank SVDF layers: no biases, L = 0, identity first stage
  s1dcnn = 1,  // full stacked 1D CNN units
};

std::string_view to_string(Arch arch);
Arch parse_arch(std::string_view name);

struct ModelConfig {
  std::size_t feature_dim = 13;  // F0, coefficients per frame
  std::size_t context = 5;       // C frames stacked on each side
  std::size_t depth = 7;         // D blocks
  std::size_t filters = 32;      // N
  std::size_t memory = 9;        // K
  std::size_t lookahead = 0;     // L
  std::size_t classes = 2;
  Arch arch = Arch::s1dcnn;
  std::size_t frame_hop_ms = 10;
  Activation first = Activation::identity;
  Activation second = Activation::relu;

  /// 13 MFCCs, +/-5 context frames, 7 blocks of 32 filters, memory 9,
  /// 2 classes, identity/ReLU activations.
  static ModelConfig paper(std::size_t lookahead = 0, Arch arch = Arch::s1dcnn);

  /// F0 * (2C + 1).
  std::size_t input_dim() const noexcept { return feature_dim * (2 * context + 1); }
  /// Frames of end-to-end lookahead: L * D + C.
  std::size_t delay_frames() const noexcept { return lookahead * depth + context; }
  /// Throws ConfigError on violated invariants.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

template <class Real>
struct BasicBlock {
  BasicUnit<Real> unit;
  BasicBatchNorm<Real> norm;
  bool operator==(const BasicBlock&) const = default;
};

/// D stacked (unit, batch norm) blocks followed by a linear head. Softmax is
/// applied by forward(), not stored.
template <class Real>
struct BasicModel {
  ModelConfig config;
  std::vector<BasicBlock<Real>> blocks;
  BasicLinear<Real> head;

  void validate() const;
  bool operator==(const BasicModel&) const = default;
};

using Block = BasicBlock<float>;
using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

template <class To, class From>
BasicModel<To> model_cast(const BasicModel<From>& m);

/// Same structure as `m` with every tensor zeroed (gradient accumulator).
template <class Real>
BasicModel<Real> zeros_like(const BasicModel<Real>& m);

/// View of a unit as the SVDF layer it encodes (beta = w, alpha = w',
/// g = g2). Only meaningful for arch = svdf models.
template <class Real>
BasicSvdf<Real> as_svdf(const BasicUnit<Real>& unit);

/// Uniform +/-1/sqrt(fan_in) weights (fan_in = F for feature filters, K for
/// time filters, N for the head), zero biases, identity batch norm.
Model build(const ModelConfig& config, Rng& rng);

/// Pre-softmax outputs, classes x T. Batch norm uses running statistics.
template <class Real>
BasicMatrix<Real> forward_logits(const BasicModel<Real>& model, const BasicMatrix<Real>& feats);

/// Per-frame class posteriors, classes x T. `feats` must already carry
/// context (F0 * (2C + 1) rows).
template <class Real>
BasicMatrix<Real> forward(const BasicModel<Real>& model, const BasicMatrix<Real>& feats);

/// Row `cls` of forward(); class 1 is the target phrase.
std::vector<float> target_posteriors(const Model& model, const Matrix& feats,
                                     std::size_t cls = 1);

/// Mean per-frame cross entropy over a minibatch of whole sequences with
/// train-mode batch norm (statistics pooled across all frames), and its
/// gradient accumulated into `grads`. When `update_stats` is set the running
/// batch-norm statistics of `model` are advanced.
template <class Real>
Real forward_backward(BasicModel<Real>& model, std::span<const BasicMatrix<Real>> feats,
                      std::span<const std::vector<std::uint8_t>> labels,
                      BasicModel<Real>& grads, bool update_stats);

/// Loss only, same definition as forward_backward (no gradients, no stats).
template <class Real>
Real minibatch_loss(const BasicModel<Real>& model, std::span<const BasicMatrix<Real>> feats,
                    std::span<const std::vector<std::uint8_t>> labels);

/// Visits every trainable tensor as a mutable span, in declaration order.
/// SVDF models skip the (always zero) unit biases.
template <class Real, class Fn>
void for_each_parameter(BasicModel<Real>& model, Fn&& fn) {
  const bool biases = model.config.arch == Arch::s1dcnn;
  for (auto& block : model.blocks) {
    fn(block.unit.feature_weights.values());
    if (biases) fn(std::span<Real>(block.unit.feature_bias));
    fn(block.unit.time_weights.values());
    if (biases) fn(std::span<Real>(block.unit.time_bias));
    fn(std::span<Real>(block.norm.gamma));
    fn(std::span<Real>(block.norm.shift));
  }
  fn(model.head.weights.values());
  fn(std::span<Real>(model.head.bias));
}

/// Pairs each parameter tensor with the matching tensor of `other`.
template <class Real, class Fn>
void for_each_parameter_pair(BasicModel<Real>& model, BasicModel<Real>& other, Fn&& fn) {
  std::vector<std::span<Real>> a, b;
  for_each_parameter(model, [&](std::span<Real> s) { a.push_back(s); });
  for_each_parameter(other, [&](std::span<Real> s) { b.push_back(s); });
  if (a.size() != b.size()) throw ShapeError("parameter sets differ in structure");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) throw ShapeError("parameter tensors differ in size");
    fn(a[i], b[i]);
  }
}

struct ReceptiveField {
  std::size_t past_ms = 0;
  std::size_t future_ms = 0;
  std::size_t past_frames = 0;
  std::size_t future_frames = 0;
  bool operator==(const ReceptiveField&) const = default;
};

/// past = (K-1-L) * D + C frames, future = L * D + C frames.
ReceptiveField receptive_field(const ModelConfig& config);

/// (L * D + C) * hop in milliseconds.
std::size_t output_delay(const ModelConfig& config);

struct ParamCount {
  std::size_t conv = 0;  // feature and time filters (+ biases for s1dcnn)
  std::size_t norm = 0;  // gamma and beta; running statistics excluded
  std::size_t head = 0;
  std::size_t total() const noexcept { return conv + norm + head; }
};

ParamCount count_params(const ModelConfig& config);
ParamCount count_params(const Model& model);

/// Multiply-accumulates per output frame: one per filter weight, one per
/// channel for the fused inference batch norm; bias additions are free and
/// score smoothing is not included.
struct MacCount {
  std::size_t feature_conv = 0;
  std::size_t time_conv = 0;
  std::size_t norm = 0;
  std::size_t head = 0;
  std::size_t total() const noexcept { return feature_conv + time_conv + norm + head; }
};

MacCount count_macs(const ModelConfig& config);
MacCount count_macs(const Model& model);

// Model file: "S1DC", version u8, config (u32le fields), kind bytes, then the
// tensors in declaration order as f32le. See README for the exact layout.
inline constexpr std::uint8_t kModelFileVersion = 1;

std::vector<std::uint8_t> serialize(const Model& model);
Model deserialize(std::span<const std::uint8_t> bytes);
void save(const Model& model, const std::filesystem::path& path);
Model load(const std::filesystem::path& path);

/// Block i unit replaced by reduce_svdf_to_unit(as_svdf(unit)), arch switched
/// to s1dcnn. Batch norm and head are copied unchanged.
Model reduce_svdf_model(const Model& svdf_model);

/// Summary used by the `info` command.
struct ModelInfo {
  ModelConfig config;
  ParamCount params;
  MacCount macs;
  ReceptiveField field;
  std::size_t delay_ms = 0;
};

ModelInfo describe(const ModelConfig& config);
/// key=value lines.
std::string format_info(const ModelInfo& info);
/// JSON document with the same fields.
std::string format_info_json(const ModelInfo& info);

}  // namespace kws
