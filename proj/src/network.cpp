#include "kws/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace kws {

std::string_view to_string(Arch arch) {
  return arch == Arch::svdf ? "svdf" : "s1dcnn";
}

Arch parse_arch(std::string_view name) {
  if (name == "svdf") return Arch::svdf;
  if (name == "s1dcnn") return Arch::s1dcnn;
  throw ConfigError("unknown architecture '" + std::string(name) + "' (svdf|s1dcnn)");
}

ModelConfig ModelConfig::paper(std::size_t lookahead, Arch arch) {
  ModelConfig c;
  c.lookahead = lookahead;
  c.arch = arch;
  return c;
}

void ModelConfig::validate() const {
  if (feature_dim == 0 || depth == 0 || filters == 0 || memory == 0 || classes == 0 ||
      frame_hop_ms == 0) {
    throw ConfigError("feature_dim, depth, filters, memory, classes and hop must be >= 1");
  }
  if (classes < 2) throw ConfigError("classes must be >= 2 (keyword plus filler)");
  if (lookahead > memory - 1) {
    throw ConfigError("lookahead L=" + std::to_string(lookahead) + " must be <= K-1=" +
                      std::to_string(memory - 1));
  }
  if (arch == Arch::svdf) {
    if (lookahead != 0) throw ConfigError("svdf architecture requires lookahead 0");
    if (first != Activation::identity) {
      throw ConfigError("svdf architecture requires an identity first stage");
    }
  }
}

template <class Real>
void BasicModel<Real>::validate() const {
  config.validate();
  if (blocks.size() != config.depth) throw ConfigError("block count does not match depth");
  std::size_t in = config.input_dim();
  for (const auto& block : blocks) {
    block.unit.validate();
    block.norm.validate();
    if (block.unit.input_dim() != in || block.unit.filters() != config.filters ||
        block.unit.kernel() != config.memory || block.unit.lookahead != config.lookahead ||
        block.norm.channels() != config.filters) {
      throw ConfigError("block shapes do not match the model config");
    }
    if (config.arch == Arch::svdf) {
      for (std::size_t n = 0; n < config.filters; ++n) {
        if (block.unit.feature_bias[n] != Real(0) || block.unit.time_bias[n] != Real(0)) {
          throw ConfigError("svdf model carries a nonzero bias");
        }
      }
    }
    in = config.filters;
  }
  head.validate();
  if (head.inputs() != config.filters || head.outputs() != config.classes) {
    throw ConfigError("head shape does not match the model config");
  }
}

template <class To, class From>
BasicModel<To> model_cast(const BasicModel<From>& m) {
  BasicModel<To> out;
  out.config = m.config;
  for (const auto& b : m.blocks) {
    BasicBlock<To> nb;
    nb.unit.feature_weights = matrix_cast<To>(b.unit.feature_weights);
    nb.unit.feature_bias = vector_cast<To>(b.unit.feature_bias);
    nb.unit.time_weights = matrix_cast<To>(b.unit.time_weights);
    nb.unit.time_bias = vector_cast<To>(b.unit.time_bias);
    nb.unit.lookahead = b.unit.lookahead;
    nb.unit.first = b.unit.first;
    nb.unit.second = b.unit.second;
    nb.norm.gamma = vector_cast<To>(b.norm.gamma);
    nb.norm.shift = vector_cast<To>(b.norm.shift);
    nb.norm.running_mean = vector_cast<To>(b.norm.running_mean);
    nb.norm.running_var = vector_cast<To>(b.norm.running_var);
    nb.norm.eps = static_cast<To>(b.norm.eps);
    nb.norm.momentum = static_cast<To>(b.norm.momentum);
    out.blocks.push_back(std::move(nb));
  }
  out.head.weights = matrix_cast<To>(m.head.weights);
  out.head.bias = vector_cast<To>(m.head.bias);
  return out;
}

template <class Real>
BasicModel<Real> zeros_like(const BasicModel<Real>& m) {
  BasicModel<Real> z = m;
  for (auto& b : z.blocks) {
    b.unit.feature_weights.fill(Real(0));
    std::fill(b.unit.feature_bias.begin(), b.unit.feature_bias.end(), Real(0));
    b.unit.time_weights.fill(Real(0));
    std::fill(b.unit.time_bias.begin(), b.unit.time_bias.end(), Real(0));
    for (auto* v : {&b.norm.gamma, &b.norm.shift, &b.norm.running_mean, &b.norm.running_var}) {
      std::fill(v->begin(), v->end(), Real(0));
    }
  }
  z.head.weights.fill(Real(0));
  std::fill(z.head.bias.begin(), z.head.bias.end(), Real(0));
  return z;
}

template <class Real>
BasicSvdf<Real> as_svdf(const BasicUnit<Real>& unit) {
  return BasicSvdf<Real>{unit.feature_weights, unit.time_weights, unit.second};
}

namespace {

void fill_uniform(std::span<float> values, double bound, Rng& rng) {
  for (auto& v : values) v = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace

Model build(const ModelConfig& config, Rng& rng) {
  config.validate();
  Model model;
  model.config = config;
  std::size_t in = config.input_dim();
  for (std::size_t d = 0; d < config.depth; ++d) {
    Block block;
    block.unit = make_unit<float>(config.filters, in, config.memory, config.lookahead,
                                  config.first, config.second);
    fill_uniform(block.unit.feature_weights.values(), 1.0 / std::sqrt(double(in)), rng);
    fill_uniform(block.unit.time_weights.values(), 1.0 / std::sqrt(double(config.memory)), rng);
    block.norm = make_batchnorm<float>(config.filters);
    model.blocks.push_back(std::move(block));
    in = config.filters;
  }
  model.head = make_linear<float>(config.classes, config.filters);
  fill_uniform(model.head.weights.values(), 1.0 / std::sqrt(double(config.filters)), rng);
  return model;
}

namespace {

// Shared forward/backward over a minibatch of whole sequences. When `grads`
// is null only the loss is computed; when `stats_sink` is non-null its
// running batch-norm statistics are advanced.
template <class Real>
Real run_minibatch(const BasicModel<Real>& model, std::span<const BasicMatrix<Real>> feats,
                   std::span<const std::vector<std::uint8_t>> labels, BasicModel<Real>* grads,
                   BasicModel<Real>* stats_sink) {
  if (feats.size() != labels.size()) throw ShapeError("minibatch: features/labels count differ");
  if (feats.empty()) throw ShapeError("minibatch: empty batch");
  const bool svdf = model.config.arch == Arch::svdf;
  const std::size_t depth = model.blocks.size();
  const std::size_t batch = feats.size();

  std::vector<std::vector<UnitCache<Real>>> unit_caches(depth, std::vector<UnitCache<Real>>(batch));
  std::vector<std::vector<SvdfCache<Real>>> svdf_caches(depth, std::vector<SvdfCache<Real>>(batch));
  std::vector<BatchNormCache<Real>> norm_caches(depth);
  std::vector<BasicSvdf<Real>> svdf_layers;
  if (svdf) {
    for (const auto& b : model.blocks) svdf_layers.push_back(as_svdf(b.unit));
  }

  std::vector<BasicMatrix<Real>> x(feats.begin(), feats.end());
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& block = model.blocks[l];
    std::vector<BasicMatrix<Real>> u(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      u[i] = svdf ? svdf_forward(svdf_layers[l], x[i], grads ? &svdf_caches[l][i] : nullptr)
                  : unit_forward(block.unit, x[i], grads ? &unit_caches[l][i] : nullptr);
    }
    x = batchnorm_forward_batch<Real>(block.norm, u, &norm_caches[l]);
    if (stats_sink) update_running_stats(stats_sink->blocks[l].norm, norm_caches[l]);
  }

  std::size_t total = 0;
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i].size() != x[i].cols()) {
      throw ShapeError("minibatch: label count " + std::to_string(labels[i].size()) +
                       " != frame count " + std::to_string(x[i].cols()));
    }
    total += x[i].cols();
  }
  if (total == 0) throw ShapeError("minibatch: no frames");

  const std::size_t classes = model.config.classes;
  Real loss = 0;
  std::vector<BasicMatrix<Real>> grad_logits(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const auto logits = linear_forward(model.head, x[i]);
    BasicMatrix<Real> g(classes, logits.cols());
    std::vector<Real> column(classes);
    for (std::size_t t = 0; t < logits.cols(); ++t) {
      const std::size_t y = labels[i][t];
      if (y >= classes) throw DataError("label " + std::to_string(y) + " out of range");
      Real peak = logits(0, t);
      for (std::size_t c = 1; c < classes; ++c) peak = std::max(peak, logits(c, t));
      Real z = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        column[c] = std::exp(logits(c, t) - peak);
        z += column[c];
      }
      loss -= logits(y, t) - peak - std::log(z);
      for (std::size_t c = 0; c < classes; ++c) {
        g(c, t) = (column[c] / z - (c == y ? Real(1) : Real(0))) / static_cast<Real>(total);
      }
    }
    grad_logits[i] = std::move(g);
  }
  loss /= static_cast<Real>(total);
  if (!grads) return loss;

  std::vector<BasicMatrix<Real>> dx(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    dx[i] = linear_backward(model.head, x[i], grad_logits[i], grads->head);
  }
  for (std::size_t l = depth; l-- > 0;) {
    const auto& block = model.blocks[l];
    auto& gblock = grads->blocks[l];
    const auto du = batchnorm_backward<Real>(block.norm, norm_caches[l], dx, gblock.norm);
    if (svdf) {
      BasicSvdf<Real> g{BasicMatrix<Real>(block.unit.filters(), block.unit.input_dim()),
                        BasicMatrix<Real>(block.unit.filters(), block.unit.kernel()),
                        block.unit.second};
      for (std::size_t i = 0; i < batch; ++i) {
        dx[i] = svdf_backward(svdf_layers[l], svdf_caches[l][i], du[i], g);
      }
      auto gw = gblock.unit.feature_weights.values();
      auto gt = gblock.unit.time_weights.values();
      for (std::size_t j = 0; j < gw.size(); ++j) gw[j] += g.beta.values()[j];
      for (std::size_t j = 0; j < gt.size(); ++j) gt[j] += g.alpha.values()[j];
    } else {
      for (std::size_t i = 0; i < batch; ++i) {
        dx[i] = unit_backward(block.unit, unit_caches[l][i], du[i], gblock.unit);
      }
    }
  }
  return loss;
}

}  // namespace

template <class Real>
BasicMatrix<Real> forward_logits(const BasicModel<Real>& model, const BasicMatrix<Real>& feats) {
  if (feats.rows() != model.config.input_dim()) {
    throw ShapeError("forward: features have " + std::to_string(feats.rows()) +
                     " rows, model expects " + std::to_string(model.config.input_dim()));
  }
  BasicMatrix<Real> x = feats;
  for (const auto& block : model.blocks) {
    x = model.config.arch == Arch::svdf ? svdf_forward(as_svdf(block.unit), x)
                                        : unit_forward(block.unit, x);
    x = batchnorm_infer(block.norm, x);
  }
  return linear_forward(model.head, x);
}

template <class Real>
BasicMatrix<Real> forward(const BasicModel<Real>& model, const BasicMatrix<Real>& feats) {
  BasicMatrix<Real> out = forward_logits(model, feats);
  for (std::size_t t = 0; t < out.cols(); ++t) {
    const auto column = out.column(t);
    out.set_column(t, softmax<Real>(column));
  }
  return out;
}

std::vector<float> target_posteriors(const Model& model, const Matrix& feats, std::size_t cls) {
  const Matrix post = forward(model, feats);
  if (cls >= post.rows()) throw ShapeError("target class out of range");
  const auto row = post.row(cls);
  return {row.begin(), row.end()};
}

template <class Real>
Real forward_backward(BasicModel<Real>& model, std::span<const BasicMatrix<Real>> feats,
                      std::span<const std::vector<std::uint8_t>> labels, BasicModel<Real>& grads,
                      bool update_stats) {
  return run_minibatch<Real>(model, feats, labels, &grads, update_stats ? &model : nullptr);
}

template <class Real>
Real minibatch_loss(const BasicModel<Real>& model, std::span<const BasicMatrix<Real>> feats,
                    std::span<const std::vector<std::uint8_t>> labels) {
  return run_minibatch<Real>(model, feats, labels, nullptr, nullptr);
}

ReceptiveField receptive_field(const ModelConfig& config) {
  config.validate();
  ReceptiveField f;
  f.past_frames = (config.memory - 1 - config.lookahead) * config.depth + config.context;
  f.future_frames = config.lookahead * config.depth + config.context;
  f.past_ms = f.past_frames * config.frame_hop_ms;
  f.future_ms = f.future_frames * config.frame_hop_ms;
  return f;
}

std::size_t output_delay(const ModelConfig& config) {
  config.validate();
  return config.delay_frames() * config.frame_hop_ms;
}

ParamCount count_params(const ModelConfig& config) {
  config.validate();
  ParamCount p;
  std::size_t in = config.input_dim();
  for (std::size_t d = 0; d < config.depth; ++d) {
    p.conv += config.filters * (in + config.memory);
    if (config.arch == Arch::s1dcnn) p.conv += 2 * config.filters;
    p.norm += 2 * config.filters;
    in = config.filters;
  }
  p.head = config.filters * config.classes + config.classes;
  return p;
}

ParamCount count_params(const Model& model) {
  ParamCount p;
  const bool biases = model.config.arch == Arch::s1dcnn;
  for (const auto& b : model.blocks) {
    p.conv += b.unit.feature_weights.size() + b.unit.time_weights.size();
    if (biases) p.conv += b.unit.feature_bias.size() + b.unit.time_bias.size();
    p.norm += b.norm.gamma.size() + b.norm.shift.size();
  }
  p.head = model.head.weights.size() + model.head.bias.size();
  return p;
}

MacCount count_macs(const ModelConfig& config) {
  config.validate();
  MacCount m;
  std::size_t in = config.input_dim();
  for (std::size_t d = 0; d < config.depth; ++d) {
    m.feature_conv += config.filters * in;
    m.time_conv += config.filters * config.memory;
    m.norm += config.filters;
    in = config.filters;
  }
  m.head = config.filters * config.classes;
  return m;
}

MacCount count_macs(const Model& model) {
  MacCount m;
  for (const auto& b : model.blocks) {
    m.feature_conv += b.unit.feature_weights.size();
    m.time_conv += b.unit.time_weights.size();
    m.norm += b.norm.channels();
  }
  m.head = model.head.weights.size();
  return m;
}

Model reduce_svdf_model(const Model& svdf_model) {
  if (svdf_model.config.arch != Arch::svdf) throw ConfigError("model is not an svdf model");
  Model out = svdf_model;
  out.config.arch = Arch::s1dcnn;
  out.config.first = Activation::identity;
  for (auto& b : out.blocks) b.unit = reduce_svdf_to_unit(as_svdf(b.unit));
  return out;
}

ModelInfo describe(const ModelConfig& config) {
  ModelInfo info;
  info.config = config;
  info.params = count_params(config);
  info.macs = count_macs(config);
  info.field = receptive_field(config);
  info.delay_ms = output_delay(config);
  return info;
}

std::string format_info(const ModelInfo& info) {
  const auto& c = info.config;
  std::ostringstream out;
  out << "arch=" << to_string(c.arch) << '\n'
      << "feature_dim=" << c.feature_dim << '\n'
      << "context=" << c.context << '\n'
      << "depth=" << c.depth << '\n'
      << "filters=" << c.filters << '\n'
      << "memory=" << c.memory << '\n'
      << "lookahead=" << c.lookahead << '\n'
      << "classes=" << c.classes << '\n'
      << "input_dim=" << c.input_dim() << '\n'
      << "params=" << info.params.total() << '\n'
      << "params_conv=" << info.params.conv << '\n'
      << "params_norm=" << info.params.norm << '\n'
      << "params_head=" << info.params.head << '\n'
      << "macs=" << info.macs.total() << '\n'
      << "macs_feature_conv=" << info.macs.feature_conv << '\n'
      << "macs_time_conv=" << info.macs.time_conv << '\n'
      << "macs_norm=" << info.macs.norm << '\n'
      << "macs_head=" << info.macs.head << '\n'
      << "receptive_field_ms=" << info.field.past_ms << '/' << info.field.future_ms << '\n'
      << "receptive_field_past_ms=" << info.field.past_ms << '\n'
      << "receptive_field_future_ms=" << info.field.future_ms << '\n'
      << "delay_ms=" << info.delay_ms << '\n';
  return out.str();
}

std::string format_info_json(const ModelInfo& info) {
  const auto& c = info.config;
  nlohmann::ordered_json j;
  j["config"] = {{"arch", to_string(c.arch)},   {"feature_dim", c.feature_dim},
                 {"context", c.context},        {"depth", c.depth},
                 {"filters", c.filters},        {"memory", c.memory},
                 {"lookahead", c.lookahead},    {"classes", c.classes},
                 {"frame_hop_ms", c.frame_hop_ms}, {"input_dim", c.input_dim()}};
  j["params"] = {{"total", info.params.total()},
                 {"conv", info.params.conv},
                 {"norm", info.params.norm},
                 {"head", info.params.head}};
  j["macs"] = {{"total", info.macs.total()},
               {"feature_conv", info.macs.feature_conv},
               {"time_conv", info.macs.time_conv},
               {"norm", info.macs.norm},
               {"head", info.macs.head}};
  j["receptive_field_ms"] = {{"past", info.field.past_ms}, {"future", info.field.future_ms}};
  j["delay_ms"] = info.delay_ms;
  return j.dump(2) + "\n";
}

#define KWS_INSTANTIATE_NETWORK(Real)                                                        \
  template struct BasicModel<Real>;                                                          \
  template BasicModel<Real> zeros_like(const BasicModel<Real>&);                             \
  template BasicSvdf<Real> as_svdf(const BasicUnit<Real>&);                                  \
  template BasicMatrix<Real> forward_logits(const BasicModel<Real>&, const BasicMatrix<Real>&); \
  template BasicMatrix<Real> forward(const BasicModel<Real>&, const BasicMatrix<Real>&);      \
  template Real forward_backward(BasicModel<Real>&, std::span<const BasicMatrix<Real>>,      \
                                 std::span<const std::vector<std::uint8_t>>, BasicModel<Real>&, \
                                 bool);                                                      \
  template Real minibatch_loss(const BasicModel<Real>&, std::span<const BasicMatrix<Real>>,  \
                               std::span<const std::vector<std::uint8_t>>);

KWS_INSTANTIATE_NETWORK(float)
KWS_INSTANTIATE_NETWORK(double)

template BasicModel<double> model_cast(const BasicModel<float>&);
template BasicModel<float> model_cast(const BasicModel<double>&);

}  // namespace kws
