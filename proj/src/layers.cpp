#include "kws/layers.hpp"

#include <string>

namespace kws {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

namespace {

template <class Real>
void check_rows(const BasicMatrix<Real>& m, std::size_t expected, const char* what) {
  if (m.rows() != expected) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(m.rows()) +
                     " channels, layer expects " + std::to_string(expected));
  }
}

template <class Real>
void check_same_shape(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b,
                      const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": gradient shape does not match forward output");
  }
}

// dst += alpha * src
template <class Real>
void axpy(Real alpha, std::span<const Real> src, std::span<Real> dst) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

template <class Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
  // eight running sums so the loop vectorises without reassociation flags
  Real lane[8] = {};
  const std::size_t n = a.size(), body = n - n % 8;
  for (std::size_t i = 0; i < body; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
  }
  Real acc = 0;
  for (Real v : lane) acc += v;
  for (std::size_t i = body; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// grad_out * g'(pre), elementwise.
template <class Real>
BasicMatrix<Real> through_activation(Activation kind, const BasicMatrix<Real>& pre,
                                     const BasicMatrix<Real>& out,
                                     const BasicMatrix<Real>& grad_out) {
  BasicMatrix<Real> g = grad_out;
  if (kind == Activation::identity) return g;
  auto gv = g.values();
  const auto pv = pre.values();
  const auto ov = out.values();
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= activation_slope(kind, pv[i], ov[i]);
  return g;
}

// Projection of x onto each row of `weights` (no bias): N x T.
template <class Real>
BasicMatrix<Real> project(const BasicMatrix<Real>& weights, const BasicMatrix<Real>& x) {
  BasicMatrix<Real> out(weights.rows(), x.cols());
  for (std::size_t n = 0; n < weights.rows(); ++n) {
    auto dst = out.row(n);
    for (std::size_t f = 0; f < weights.cols(); ++f) {
      axpy<Real>(weights(n, f), x.row(f), dst);
    }
  }
  return out;
}

// Depthwise filter of `a` by `taps` with offset L; out-of-range reads are 0.
template <class Real>
BasicMatrix<Real> time_filter(const BasicMatrix<Real>& taps, std::size_t lookahead,
                              const BasicMatrix<Real>& a) {
  const std::size_t k_len = taps.cols();
  const auto frames = static_cast<std::ptrdiff_t>(a.cols());
  // Input index for output t and tap k is t + k + shift.
  const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(lookahead) -
                               static_cast<std::ptrdiff_t>(k_len) + 1;
  BasicMatrix<Real> out(a.rows(), a.cols());
  for (std::size_t n = 0; n < a.rows(); ++n) {
    const auto src = a.row(n);
    const auto w = taps.row(n);
    auto dst = out.row(n);
    for (std::ptrdiff_t t = 0; t < frames; ++t) {
      Real acc = 0;
      for (std::size_t k = 0; k < k_len; ++k) {
        const std::ptrdiff_t s = t + static_cast<std::ptrdiff_t>(k) + shift;
        if (s >= 0 && s < frames) acc += w[k] * src[static_cast<std::size_t>(s)];
      }
      dst[static_cast<std::size_t>(t)] = acc;
    }
  }
  return out;
}

// Adjoint of time_filter: accumulates tap gradients and returns d/da.
template <class Real>
BasicMatrix<Real> time_filter_backward(const BasicMatrix<Real>& taps, std::size_t lookahead,
                                       const BasicMatrix<Real>& a, const BasicMatrix<Real>& g,
                                       BasicMatrix<Real>& grad_taps) {
  const std::size_t k_len = taps.cols();
  const auto frames = static_cast<std::ptrdiff_t>(a.cols());
  const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(lookahead) -
                               static_cast<std::ptrdiff_t>(k_len) + 1;
  BasicMatrix<Real> grad_a(a.rows(), a.cols());
  for (std::size_t n = 0; n < a.rows(); ++n) {
    const auto src = a.row(n);
    const auto gn = g.row(n);
    const auto w = taps.row(n);
    auto dw = grad_taps.row(n);
    auto da = grad_a.row(n);
    for (std::size_t k = 0; k < k_len; ++k) {
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) + shift;
      const std::ptrdiff_t t_lo = std::max<std::ptrdiff_t>(0, -off);
      const std::ptrdiff_t t_hi = std::min<std::ptrdiff_t>(frames, frames - off);
      Real acc = 0;
      for (std::ptrdiff_t t = t_lo; t < t_hi; ++t) {
        const auto s = static_cast<std::size_t>(t + off);
        const auto tt = static_cast<std::size_t>(t);
        acc += gn[tt] * src[s];
        da[s] += w[k] * gn[tt];
      }
      dw[k] += acc;
    }
  }
  return grad_a;
}

// Adjoint of project: accumulates weight gradients and returns d/dx.
template <class Real>
BasicMatrix<Real> project_backward(const BasicMatrix<Real>& weights, const BasicMatrix<Real>& x,
                                   const BasicMatrix<Real>& g, BasicMatrix<Real>& grad_weights) {
  BasicMatrix<Real> grad_x(x.rows(), x.cols());
  for (std::size_t n = 0; n < weights.rows(); ++n) {
    const auto gn = g.row(n);
    for (std::size_t f = 0; f < weights.cols(); ++f) {
      grad_weights(n, f) += dot<Real>(gn, x.row(f));
      axpy<Real>(weights(n, f), gn, grad_x.row(f));
    }
  }
  return grad_x;
}

template <class Real>
void add_bias_and_activate(BasicMatrix<Real>& m, const std::vector<Real>& bias,
                           Activation kind, BasicMatrix<Real>* pre) {
  for (std::size_t n = 0; n < m.rows(); ++n) {
    const Real b = bias.empty() ? Real(0) : bias[n];
    for (auto& v : m.row(n)) v += b;
  }
  if (pre) *pre = m;
  if (kind != Activation::identity) {
    for (auto& v : m.values()) v = activate(kind, v);
  }
}

template <class Real>
void accumulate_row_sums(const BasicMatrix<Real>& g, std::vector<Real>& dst) {
  for (std::size_t n = 0; n < g.rows(); ++n) {
    Real acc = 0;
    for (Real v : g.row(n)) acc += v;
    dst[n] += acc;
  }
}

}  // namespace

template <class Real>
void BasicUnit<Real>::validate() const {
  const std::size_t n = filters();
  if (n == 0 || input_dim() == 0 || kernel() == 0) {
    throw ConfigError("unit requires N, F, K >= 1");
  }
  if (lookahead > kernel() - 1) {
    throw ConfigError("unit lookahead L=" + std::to_string(lookahead) +
                      " must be <= K-1=" + std::to_string(kernel() - 1));
  }
  if (time_weights.rows() != n || feature_bias.size() != n || time_bias.size() != n) {
    throw ConfigError("unit tensor shapes disagree on the filter count");
  }
}

template <class Real>
BasicUnit<Real> make_unit(std::size_t filters, std::size_t input_dim, std::size_t kernel,
                          std::size_t lookahead, Activation first, Activation second) {
  BasicUnit<Real> u;
  u.feature_weights = BasicMatrix<Real>(filters, input_dim);
  u.feature_bias.assign(filters, Real(0));
  u.time_weights = BasicMatrix<Real>(filters, kernel);
  u.time_bias.assign(filters, Real(0));
  u.lookahead = lookahead;
  u.first = first;
  u.second = second;
  u.validate();
  return u;
}

template <class Real>
void BasicSvdf<Real>::validate() const {
  if (nodes() == 0 || input_dim() == 0 || memory() == 0) {
    throw ConfigError("svdf layer requires N, F, K >= 1");
  }
  if (alpha.rows() != nodes()) throw ConfigError("svdf alpha/beta node counts disagree");
}

template <class Real>
void BasicBatchNorm<Real>::validate() const {
  const std::size_t n = gamma.size();
  if (shift.size() != n || running_mean.size() != n || running_var.size() != n) {
    throw ConfigError("batch norm tensor lengths disagree");
  }
  if (!(eps > Real(0))) throw ConfigError("batch norm eps must be positive");
  if (!(momentum > Real(0) && momentum < Real(1))) {
    throw ConfigError("batch norm momentum must be in (0, 1)");
  }
  for (Real v : running_var) {
    if (v < Real(0)) throw ConfigError("batch norm running variance is negative");
  }
}

template <class Real>
BasicBatchNorm<Real> make_batchnorm(std::size_t channels) {
  BasicBatchNorm<Real> bn;
  bn.gamma.assign(channels, Real(1));
  bn.shift.assign(channels, Real(0));
  bn.running_mean.assign(channels, Real(0));
  bn.running_var.assign(channels, Real(1));
  return bn;
}

template <class Real>
void BasicLinear<Real>::validate() const {
  if (outputs() == 0 || inputs() == 0 || bias.size() != outputs()) {
    throw ConfigError("linear layer shapes are inconsistent");
  }
}

template <class Real>
BasicLinear<Real> make_linear(std::size_t outputs, std::size_t inputs) {
  BasicLinear<Real> lin;
  lin.weights = BasicMatrix<Real>(outputs, inputs);
  lin.bias.assign(outputs, Real(0));
  return lin;
}

// -- forward -----------------------------------------------------------------

template <class Real>
BasicMatrix<Real> feature_conv(const BasicUnit<Real>& unit, const BasicMatrix<Real>& x,
                               BasicMatrix<Real>* pre) {
  check_rows(x, unit.input_dim(), "feature_conv");
  BasicMatrix<Real> out = project(unit.feature_weights, x);
  add_bias_and_activate(out, unit.feature_bias, unit.first, pre);
  return out;
}

template <class Real>
BasicMatrix<Real> depthwise_time_conv(const BasicUnit<Real>& unit, const BasicMatrix<Real>& a,
                                      BasicMatrix<Real>* pre) {
  check_rows(a, unit.filters(), "depthwise_time_conv");
  BasicMatrix<Real> out = time_filter(unit.time_weights, unit.lookahead, a);
  add_bias_and_activate(out, unit.time_bias, unit.second, pre);
  return out;
}

template <class Real>
BasicMatrix<Real> unit_forward(const BasicUnit<Real>& unit, const BasicMatrix<Real>& x,
                               UnitCache<Real>* cache) {
  if (!cache) return depthwise_time_conv(unit, feature_conv(unit, x));
  cache->input = x;
  cache->feature_out = feature_conv(unit, x, &cache->feature_pre);
  cache->output = depthwise_time_conv(unit, cache->feature_out, &cache->time_pre);
  cache->valid = true;
  return cache->output;
}

template <class Real>
BasicMatrix<Real> svdf_forward(const BasicSvdf<Real>& layer, const BasicMatrix<Real>& x,
                               SvdfCache<Real>* cache) {
  check_rows(x, layer.input_dim(), "svdf_forward");
  const std::size_t k_len = layer.memory();
  const std::size_t frames = x.cols();
  BasicMatrix<Real> projection = project(layer.beta, x);
  BasicMatrix<Real> pre(layer.nodes(), frames);
  for (std::size_t n = 0; n < layer.nodes(); ++n) {
    const auto p = projection.row(n);
    const auto alpha = layer.alpha.row(n);
    for (std::size_t t = 0; t < frames; ++t) {
      Real acc = 0;
      // Tap k (0-based) reads frame t - K + 1 + k.
      for (std::size_t k = 0; k < k_len; ++k) {
        if (t + k + 1 < k_len) continue;
        acc += alpha[k] * p[t + k + 1 - k_len];
      }
      pre(n, t) = acc;
    }
  }
  BasicMatrix<Real> out = pre;
  for (auto& v : out.values()) v = activate(layer.activation, v);
  if (cache) {
    cache->input = x;
    cache->projection = std::move(projection);
    cache->pre = std::move(pre);
    cache->output = out;
    cache->valid = true;
  }
  return out;
}

template <class Real>
BasicUnit<Real> reduce_svdf_to_unit(const BasicSvdf<Real>& layer) {
  BasicUnit<Real> unit;
  unit.feature_weights = layer.beta;
  unit.feature_bias.assign(layer.nodes(), Real(0));
  unit.time_weights = layer.alpha;
  unit.time_bias.assign(layer.nodes(), Real(0));
  unit.lookahead = 0;
  unit.first = Activation::identity;
  unit.second = layer.activation;
  return unit;
}

template <class Real>
BasicMatrix<Real> batchnorm_infer(const BasicBatchNorm<Real>& bn, const BasicMatrix<Real>& a) {
  check_rows(a, bn.channels(), "batchnorm");
  BasicMatrix<Real> out(a.rows(), a.cols());
  for (std::size_t n = 0; n < a.rows(); ++n) {
    const Real scale = bn.gamma[n] / std::sqrt(bn.running_var[n] + bn.eps);
    const Real mean = bn.running_mean[n];
    const Real shift = bn.shift[n];
    const auto src = a.row(n);
    auto dst = out.row(n);
    for (std::size_t t = 0; t < src.size(); ++t) dst[t] = scale * (src[t] - mean) + shift;
  }
  return out;
}

template <class Real>
std::vector<BasicMatrix<Real>> batchnorm_forward_batch(const BasicBatchNorm<Real>& bn,
                                                       std::span<const BasicMatrix<Real>> batch,
                                                       BatchNormCache<Real>* cache) {
  const std::size_t channels = bn.channels();
  std::size_t count = 0;
  for (const auto& a : batch) {
    check_rows(a, channels, "batchnorm");
    count += a.cols();
  }
  if (count == 0) throw ShapeError("batchnorm: empty minibatch");

  std::vector<Real> mean(channels, Real(0)), var(channels, Real(0)), inv_std(channels);
  for (std::size_t n = 0; n < channels; ++n) {
    Real s = 0;
    for (const auto& a : batch) {
      for (Real v : a.row(n)) s += v;
    }
    mean[n] = s / static_cast<Real>(count);
    Real q = 0;
    for (const auto& a : batch) {
      for (Real v : a.row(n)) q += (v - mean[n]) * (v - mean[n]);
    }
    var[n] = q / static_cast<Real>(count);
    inv_std[n] = Real(1) / std::sqrt(var[n] + bn.eps);
  }

  std::vector<BasicMatrix<Real>> out;
  std::vector<BasicMatrix<Real>> normalized;
  out.reserve(batch.size());
  normalized.reserve(batch.size());
  for (const auto& a : batch) {
    BasicMatrix<Real> xhat(a.rows(), a.cols());
    BasicMatrix<Real> y(a.rows(), a.cols());
    for (std::size_t n = 0; n < channels; ++n) {
      const auto src = a.row(n);
      auto h = xhat.row(n);
      auto dst = y.row(n);
      for (std::size_t t = 0; t < src.size(); ++t) {
        h[t] = (src[t] - mean[n]) * inv_std[n];
        dst[t] = bn.gamma[n] * h[t] + bn.shift[n];
      }
    }
    normalized.push_back(std::move(xhat));
    out.push_back(std::move(y));
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->mean = std::move(mean);
    cache->var = std::move(var);
    cache->inv_std = std::move(inv_std);
    cache->count = count;
    cache->valid = true;
  }
  return out;
}

template <class Real>
void update_running_stats(BasicBatchNorm<Real>& bn, const BatchNormCache<Real>& cache) {
  if (!cache.valid) throw StateError("batchnorm: statistics update without a forward pass");
  const Real m = bn.momentum;
  const Real correction = cache.count > 1 ? static_cast<Real>(cache.count) /
                                                static_cast<Real>(cache.count - 1)
                                          : Real(1);
  for (std::size_t n = 0; n < bn.channels(); ++n) {
    bn.running_mean[n] = (Real(1) - m) * bn.running_mean[n] + m * cache.mean[n];
    bn.running_var[n] = (Real(1) - m) * bn.running_var[n] + m * cache.var[n] * correction;
  }
}

template <class Real>
BasicMatrix<Real> batchnorm_forward(BasicBatchNorm<Real>& bn, const BasicMatrix<Real>& a,
                                    NormMode mode) {
  if (mode == NormMode::infer) return batchnorm_infer(bn, a);
  BatchNormCache<Real> cache;
  auto out = batchnorm_forward_batch<Real>(bn, std::span<const BasicMatrix<Real>>(&a, 1), &cache);
  update_running_stats(bn, cache);
  return std::move(out.front());
}

template <class Real>
BasicMatrix<Real> linear_forward(const BasicLinear<Real>& lin, const BasicMatrix<Real>& h) {
  check_rows(h, lin.inputs(), "linear_forward");
  BasicMatrix<Real> out = project(lin.weights, h);
  add_bias_and_activate(out, lin.bias, Activation::identity, static_cast<BasicMatrix<Real>*>(nullptr));
  return out;
}

// -- backward ----------------------------------------------------------------

template <class Real>
BasicMatrix<Real> feature_conv_backward(const BasicUnit<Real>& unit, const BasicMatrix<Real>& x,
                                        const BasicMatrix<Real>& pre,
                                        const BasicMatrix<Real>& out,
                                        const BasicMatrix<Real>& grad_out,
                                        BasicUnit<Real>& grads) {
  check_same_shape(out, grad_out, "feature_conv_backward");
  const auto g = through_activation(unit.first, pre, out, grad_out);
  accumulate_row_sums(g, grads.feature_bias);
  return project_backward(unit.feature_weights, x, g, grads.feature_weights);
}

template <class Real>
BasicMatrix<Real> depthwise_time_conv_backward(const BasicUnit<Real>& unit,
                                               const BasicMatrix<Real>& a,
                                               const BasicMatrix<Real>& pre,
                                               const BasicMatrix<Real>& out,
                                               const BasicMatrix<Real>& grad_out,
                                               BasicUnit<Real>& grads) {
  check_same_shape(out, grad_out, "depthwise_time_conv_backward");
  const auto g = through_activation(unit.second, pre, out, grad_out);
  accumulate_row_sums(g, grads.time_bias);
  return time_filter_backward(unit.time_weights, unit.lookahead, a, g, grads.time_weights);
}

template <class Real>
BasicMatrix<Real> unit_backward(const BasicUnit<Real>& unit, const UnitCache<Real>& cache,
                                const BasicMatrix<Real>& grad_out, BasicUnit<Real>& grads) {
  if (!cache.valid) throw StateError("unit_backward: no cached forward pass");
  const auto grad_a = depthwise_time_conv_backward(unit, cache.feature_out, cache.time_pre,
                                                   cache.output, grad_out, grads);
  return feature_conv_backward(unit, cache.input, cache.feature_pre, cache.feature_out, grad_a,
                               grads);
}

template <class Real>
BasicMatrix<Real> svdf_backward(const BasicSvdf<Real>& layer, const SvdfCache<Real>& cache,
                                const BasicMatrix<Real>& grad_out, BasicSvdf<Real>& grads) {
  if (!cache.valid) throw StateError("svdf_backward: no cached forward pass");
  check_same_shape(cache.output, grad_out, "svdf_backward");
  const auto g = through_activation(layer.activation, cache.pre, cache.output, grad_out);
  const auto grad_projection =
      time_filter_backward(layer.alpha, std::size_t{0}, cache.projection, g, grads.alpha);
  return project_backward(layer.beta, cache.input, grad_projection, grads.beta);
}

template <class Real>
std::vector<BasicMatrix<Real>> batchnorm_backward(const BasicBatchNorm<Real>& bn,
                                                  const BatchNormCache<Real>& cache,
                                                  std::span<const BasicMatrix<Real>> grad_out,
                                                  BasicBatchNorm<Real>& grads) {
  if (!cache.valid) throw StateError("batchnorm_backward: no cached forward pass");
  if (grad_out.size() != cache.normalized.size()) {
    throw ShapeError("batchnorm_backward: batch size mismatch");
  }
  const std::size_t channels = bn.channels();
  const auto count = static_cast<Real>(cache.count);
  std::vector<Real> sum_g(channels, Real(0)), sum_gx(channels, Real(0));
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    check_same_shape(cache.normalized[i], grad_out[i], "batchnorm_backward");
    for (std::size_t n = 0; n < channels; ++n) {
      const auto g = grad_out[i].row(n);
      const auto h = cache.normalized[i].row(n);
      for (std::size_t t = 0; t < g.size(); ++t) {
        sum_g[n] += g[t];
        sum_gx[n] += g[t] * h[t];
      }
    }
  }
  for (std::size_t n = 0; n < channels; ++n) {
    grads.gamma[n] += sum_gx[n];
    grads.shift[n] += sum_g[n];
  }
  std::vector<BasicMatrix<Real>> grad_in;
  grad_in.reserve(grad_out.size());
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    BasicMatrix<Real> dx(grad_out[i].rows(), grad_out[i].cols());
    for (std::size_t n = 0; n < channels; ++n) {
      // dx = gamma * inv_std / M * (M g - sum g - xhat * sum(g xhat))
      const Real scale = bn.gamma[n] * cache.inv_std[n] / count;
      const auto g = grad_out[i].row(n);
      const auto h = cache.normalized[i].row(n);
      auto d = dx.row(n);
      for (std::size_t t = 0; t < g.size(); ++t) {
        d[t] = scale * (count * g[t] - sum_g[n] - h[t] * sum_gx[n]);
      }
    }
    grad_in.push_back(std::move(dx));
  }
  return grad_in;
}

template <class Real>
BasicMatrix<Real> linear_backward(const BasicLinear<Real>& lin, const BasicMatrix<Real>& h,
                                  const BasicMatrix<Real>& grad_out, BasicLinear<Real>& grads) {
  check_rows(grad_out, lin.outputs(), "linear_backward");
  if (grad_out.cols() != h.cols()) throw ShapeError("linear_backward: frame count mismatch");
  accumulate_row_sums(grad_out, grads.bias);
  return project_backward(lin.weights, h, grad_out, grads.weights);
}

#define KWS_INSTANTIATE_LAYERS(Real)                                                         \
  template struct BasicUnit<Real>;                                                           \
  template struct BasicSvdf<Real>;                                                           \
  template struct BasicBatchNorm<Real>;                                                      \
  template struct BasicLinear<Real>;                                                         \
  template BasicUnit<Real> make_unit(std::size_t, std::size_t, std::size_t, std::size_t,     \
                                     Activation, Activation);                                \
  template BasicBatchNorm<Real> make_batchnorm(std::size_t);                                 \
  template BasicLinear<Real> make_linear(std::size_t, std::size_t);                          \
  template BasicMatrix<Real> feature_conv(const BasicUnit<Real>&, const BasicMatrix<Real>&,  \
                                          BasicMatrix<Real>*);                               \
  template BasicMatrix<Real> depthwise_time_conv(const BasicUnit<Real>&,                     \
                                                 const BasicMatrix<Real>&, BasicMatrix<Real>*); \
  template BasicMatrix<Real> unit_forward(const BasicUnit<Real>&, const BasicMatrix<Real>&,  \
                                          UnitCache<Real>*);                                 \
  template BasicMatrix<Real> svdf_forward(const BasicSvdf<Real>&, const BasicMatrix<Real>&,  \
                                          SvdfCache<Real>*);                                 \
  template BasicUnit<Real> reduce_svdf_to_unit(const BasicSvdf<Real>&);                      \
  template BasicMatrix<Real> batchnorm_forward(BasicBatchNorm<Real>&, const BasicMatrix<Real>&, \
                                               NormMode);                                    \
  template BasicMatrix<Real> batchnorm_infer(const BasicBatchNorm<Real>&,                    \
                                             const BasicMatrix<Real>&);                      \
  template std::vector<BasicMatrix<Real>> batchnorm_forward_batch(                           \
      const BasicBatchNorm<Real>&, std::span<const BasicMatrix<Real>>, BatchNormCache<Real>*); \
  template void update_running_stats(BasicBatchNorm<Real>&, const BatchNormCache<Real>&);    \
  template BasicMatrix<Real> linear_forward(const BasicLinear<Real>&, const BasicMatrix<Real>&); \
  template BasicMatrix<Real> feature_conv_backward(                                          \
      const BasicUnit<Real>&, const BasicMatrix<Real>&, const BasicMatrix<Real>&,            \
      const BasicMatrix<Real>&, const BasicMatrix<Real>&, BasicUnit<Real>&);                 \
  template BasicMatrix<Real> depthwise_time_conv_backward(                                   \
      const BasicUnit<Real>&, const BasicMatrix<Real>&, const BasicMatrix<Real>&,            \
      const BasicMatrix<Real>&, const BasicMatrix<Real>&, BasicUnit<Real>&);                 \
  template BasicMatrix<Real> unit_backward(const BasicUnit<Real>&, const UnitCache<Real>&,   \
                                           const BasicMatrix<Real>&, BasicUnit<Real>&);      \
  template BasicMatrix<Real> svdf_backward(const BasicSvdf<Real>&, const SvdfCache<Real>&,   \
                                           const BasicMatrix<Real>&, BasicSvdf<Real>&);      \
  template std::vector<BasicMatrix<Real>> batchnorm_backward(                                \
      const BasicBatchNorm<Real>&, const BatchNormCache<Real>&,                              \
      std::span<const BasicMatrix<Real>>, BasicBatchNorm<Real>&);                            \
  template BasicMatrix<Real> linear_backward(const BasicLinear<Real>&, const BasicMatrix<Real>&, \
                                             const BasicMatrix<Real>&, BasicLinear<Real>&);

KWS_INSTANTIATE_LAYERS(float)
KWS_INSTANTIATE_LAYERS(double)

}  // namespace kws
