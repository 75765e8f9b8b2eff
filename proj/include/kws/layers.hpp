#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "kws/numerics.hpp"

namespace kws {

enum class Activation : std::uint8_t { identity = 0, relu = 1, sigmoid = 2 };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

template <class Real>
inline Real activate(Activation kind, Real x) {
  switch (kind) {
    case Activation::identity: return x;
    case Activation::relu: return x > Real(0) ? x : Real(0);
    case Activation::sigmoid: return Real(1) / (Real(1) + std::exp(-x));
  }
  return x;
}

/// d activate(x) / dx given the pre-activation `pre` and the output `post`.
template <class Real>
inline Real activation_slope(Activation kind, Real pre, Real post) {
  switch (kind) {
    case Activation::identity: return Real(1);
    case Activation::relu: return pre > Real(0) ? Real(1) : Real(0);
    case Activation::sigmoid: return post * (Real(1) - post);
  }
  return Real(1);
}

/// One stacked-1D-CNN unit: a per-frame convolution over the feature axis
/// followed by a depthwise convolution over time.
///
///   a_t^(n)  = g1(sum_f w_f^(n) x_{f,t} + b^(n))
///   a'_t^(n) = g2(sum_{k=1..K} w'_k^(n) a^(n)_{t-K+k+L} + b'^(n))
///
/// Time indices outside [0, T) read zero (K-1-L frames of left padding, L of
/// right padding), which is exactly what a zero-initialised streaming buffer
/// sees.
template <class Real>
struct BasicUnit {
  BasicMatrix<Real> feature_weights;  // N x F
  std::vector<Real> feature_bias;     // N
  BasicMatrix<Real> time_weights;     // N x K
  std::vector<Real> time_bias;        // N
  std::size_t lookahead = 0;          // L
  Activation first = Activation::identity;
  Activation second = Activation::relu;

  std::size_t filters() const noexcept { return feature_weights.rows(); }
  std::size_t input_dim() const noexcept { return feature_weights.cols(); }
  std::size_t kernel() const noexcept { return time_weights.cols(); }

  /// Throws ConfigError unless N, F, K >= 1, 0 <= L <= K-1 and all tensor
  /// shapes agree.
  void validate() const;

  /// Weights plus biases: N * (F + K + 2).
  std::size_t parameter_count() const noexcept {
    return filters() * (input_dim() + kernel() + 2);
  }

  bool operator==(const BasicUnit&) const = default;
};

/// Unit with every tensor zero-filled, for use as a gradient accumulator.
template <class Real>
BasicUnit<Real> make_unit(std::size_t filters, std::size_t input_dim,
                          std::size_t kernel, std::size_t lookahead = 0,
                          Activation first = Activation::identity,
                          Activation second = Activation::relu);

/// Low-rank SVDF layer: a_t = g(sum_k alpha_k sum_f beta_f x_{f,t-K+k}) per
/// node. There are no bias terms.
template <class Real>
struct BasicSvdf {
  BasicMatrix<Real> beta;   // N x F feature filters
  BasicMatrix<Real> alpha;  // N x K time filters
  Activation activation = Activation::relu;

  std::size_t nodes() const noexcept { return beta.rows(); }
  std::size_t input_dim() const noexcept { return beta.cols(); }
  std::size_t memory() const noexcept { return alpha.cols(); }
  void validate() const;

  bool operator==(const BasicSvdf&) const = default;
};

template <class Real>
struct BasicBatchNorm {
  std::vector<Real> gamma;
  std::vector<Real> shift;  // beta in the usual notation
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real eps = Real(1e-5);
  Real momentum = Real(0.1);

  std::size_t channels() const noexcept { return gamma.size(); }
  void validate() const;

  bool operator==(const BasicBatchNorm&) const = default;
};

/// gamma = 1, shift = 0, running mean 0, running variance 1.
template <class Real>
BasicBatchNorm<Real> make_batchnorm(std::size_t channels);

template <class Real>
struct BasicLinear {
  BasicMatrix<Real> weights;  // OUT x IN
  std::vector<Real> bias;     // OUT

  std::size_t outputs() const noexcept { return weights.rows(); }
  std::size_t inputs() const noexcept { return weights.cols(); }
  void validate() const;

  bool operator==(const BasicLinear&) const = default;
};

template <class Real>
BasicLinear<Real> make_linear(std::size_t outputs, std::size_t inputs);

using Unit = BasicUnit<float>;
using SvdfLayer = BasicSvdf<float>;
using BatchNorm = BasicBatchNorm<float>;
using Linear = BasicLinear<float>;

// -- forward ---------------------------------------------------------------

/// First stage: N x T map. When `pre` is given it receives the pre-activation.
template <class Real>
BasicMatrix<Real> feature_conv(const BasicUnit<Real>& unit, const BasicMatrix<Real>& x,
                               BasicMatrix<Real>* pre = nullptr);

/// Second stage over an N x T first-stage map.
template <class Real>
BasicMatrix<Real> depthwise_time_conv(const BasicUnit<Real>& unit,
                                      const BasicMatrix<Real>& a,
                                      BasicMatrix<Real>* pre = nullptr);

/// Intermediate values kept for the backward pass.
template <class Real>
struct UnitCache {
  BasicMatrix<Real> input;
  BasicMatrix<Real> feature_pre;
  BasicMatrix<Real> feature_out;
  BasicMatrix<Real> time_pre;
  BasicMatrix<Real> output;
  bool valid = false;
};

template <class Real>
BasicMatrix<Real> unit_forward(const BasicUnit<Real>& unit, const BasicMatrix<Real>& x,
                               UnitCache<Real>* cache = nullptr);

template <class Real>
struct SvdfCache {
  BasicMatrix<Real> input;
  BasicMatrix<Real> projection;  // sum_f beta_f x_{f,t}
  BasicMatrix<Real> pre;
  BasicMatrix<Real> output;
  bool valid = false;
};

template <class Real>
BasicMatrix<Real> svdf_forward(const BasicSvdf<Real>& layer, const BasicMatrix<Real>& x,
                               SvdfCache<Real>* cache = nullptr);

/// The S1DCNN unit that computes the same function as `layer`:
/// w = beta, w' = alpha, zero biases, L = 0, g1 = identity, g2 = g.
template <class Real>
BasicUnit<Real> reduce_svdf_to_unit(const BasicSvdf<Real>& layer);

enum class NormMode { train, infer };

/// Single-sequence batch norm. In train mode normalises with the statistics
/// of `a` and folds them into the running statistics.
template <class Real>
BasicMatrix<Real> batchnorm_forward(BasicBatchNorm<Real>& bn, const BasicMatrix<Real>& a,
                                    NormMode mode);

template <class Real>
BasicMatrix<Real> batchnorm_infer(const BasicBatchNorm<Real>& bn,
                                  const BasicMatrix<Real>& a);

template <class Real>
struct BatchNormCache {
  std::vector<BasicMatrix<Real>> normalized;  // x-hat per sequence
  std::vector<Real> mean;
  std::vector<Real> var;      // biased batch variance
  std::vector<Real> inv_std;  // 1 / sqrt(var + eps)
  std::size_t count = 0;      // frames pooled over the whole batch
  bool valid = false;
};

/// Train-mode normalisation of a minibatch: statistics pool every frame of
/// every sequence. Running statistics are left untouched; see
/// update_running_stats.
template <class Real>
std::vector<BasicMatrix<Real>> batchnorm_forward_batch(
    const BasicBatchNorm<Real>& bn, std::span<const BasicMatrix<Real>> batch,
    BatchNormCache<Real>* cache = nullptr);

/// running = (1 - momentum) * running + momentum * batch, using the unbiased
/// batch variance.
template <class Real>
void update_running_stats(BasicBatchNorm<Real>& bn, const BatchNormCache<Real>& cache);

template <class Real>
BasicMatrix<Real> linear_forward(const BasicLinear<Real>& lin, const BasicMatrix<Real>& h);

// -- backward --------------------------------------------------------------
//
// Every backward function accumulates (+=) parameter gradients into a
// container of the same shape as the layer and returns the gradient with
// respect to the layer input. A cache that was never filled raises
// StateError.

template <class Real>
BasicMatrix<Real> feature_conv_backward(const BasicUnit<Real>& unit,
                                        const BasicMatrix<Real>& x,
                                        const BasicMatrix<Real>& pre,
                                        const BasicMatrix<Real>& out,
                                        const BasicMatrix<Real>& grad_out,
                                        BasicUnit<Real>& grads);

template <class Real>
BasicMatrix<Real> depthwise_time_conv_backward(const BasicUnit<Real>& unit,
                                               const BasicMatrix<Real>& a,
                                               const BasicMatrix<Real>& pre,
                                               const BasicMatrix<Real>& out,
                                               const BasicMatrix<Real>& grad_out,
                                               BasicUnit<Real>& grads);

template <class Real>
BasicMatrix<Real> unit_backward(const BasicUnit<Real>& unit, const UnitCache<Real>& cache,
                                const BasicMatrix<Real>& grad_out, BasicUnit<Real>& grads);

template <class Real>
BasicMatrix<Real> svdf_backward(const BasicSvdf<Real>& layer, const SvdfCache<Real>& cache,
                                const BasicMatrix<Real>& grad_out, BasicSvdf<Real>& grads);

template <class Real>
std::vector<BasicMatrix<Real>> batchnorm_backward(const BasicBatchNorm<Real>& bn,
                                                  const BatchNormCache<Real>& cache,
                                                  std::span<const BasicMatrix<Real>> grad_out,
                                                  BasicBatchNorm<Real>& grads);

template <class Real>
BasicMatrix<Real> linear_backward(const BasicLinear<Real>& lin, const BasicMatrix<Real>& h,
                                  const BasicMatrix<Real>& grad_out, BasicLinear<Real>& grads);

/// Parameter count of the dense F x K filter bank that a unit factorises:
/// N * F * K.
inline std::size_t dense_filter_parameter_count(std::size_t filters, std::size_t input_dim,
                                                std::size_t kernel) {
  return filters * input_dim * kernel;
}

}  // namespace kws
