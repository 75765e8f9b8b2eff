#include "kws/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace kws {

std::size_t keyword_end_frame_for(std::size_t end_sample, const FrameSpec& spec) {
  return frame_count(end_sample, spec);
}

std::vector<std::uint8_t> make_labels(const Utterance& utt, std::size_t frames,
                                      const LabelWindow& window) {
  std::vector<std::uint8_t> labels(frames, 0);
  if (!utt.is_positive) return labels;
  if (!utt.keyword_end_frame) throw DataError("positive utterance without a keyword end frame");
  const std::size_t end_frame = *utt.keyword_end_frame;
  if (end_frame < window.end_offset) return labels;
  const std::size_t end = std::min(end_frame - window.end_offset, frames);
  const std::size_t begin = end > window.length ? end - window.length : 0;
  std::fill(labels.begin() + static_cast<std::ptrdiff_t>(begin),
            labels.begin() + static_cast<std::ptrdiff_t>(end), 1);
  return labels;
}

Utterance excise_keyword(const Utterance& utt) {
  if (!utt.keyword) throw DataError("cannot drop the keyword: its sample span is unknown");
  const auto [begin, end] = *utt.keyword;
  if (begin > end || end > utt.audio.samples.size()) throw DataError("keyword span outside the audio");
  Utterance out;
  out.audio.sample_rate = utt.audio.sample_rate;
  const auto& s = utt.audio.samples;
  out.audio.samples.reserve(s.size() - (end - begin));
  out.audio.samples.insert(out.audio.samples.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(begin));
  out.audio.samples.insert(out.audio.samples.end(), s.begin() + static_cast<std::ptrdiff_t>(end), s.end());
  return out;
}

Utterance drop_keyword(const Utterance& utt, Rng& rng, double probability) {
  if (!utt.is_positive) return utt;
  return rng.bernoulli(probability) ? excise_keyword(utt) : utt;
}

// -- loss --------------------------------------------------------------------

template <class Real>
LossResult<Real> cross_entropy(const BasicMatrix<Real>& posteriors,
                               std::span<const std::uint8_t> labels) {
  const std::size_t frames = posteriors.cols();
  if (labels.size() != frames) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(frames) + " frames");
  }
  if (frames == 0) throw DataError("cross_entropy: empty sequence");
  LossResult<Real> r;
  r.grad_logits = posteriors;
  double total = 0.0;
  const Real inv = Real(1) / static_cast<Real>(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    if (labels[t] >= posteriors.rows()) throw DataError("label out of range");
    const double p = std::max<double>(posteriors(labels[t], t), 1e-300);
    total -= std::log(p);
    for (std::size_t c = 0; c < posteriors.rows(); ++c) {
      r.grad_logits(c, t) = (posteriors(c, t) - Real(c == labels[t] ? 1 : 0)) * inv;
    }
  }
  r.loss = static_cast<Real>(total / static_cast<double>(frames));
  return r;
}

template LossResult<float> cross_entropy(const Matrix&, std::span<const std::uint8_t>);
template LossResult<double> cross_entropy(const Matrix64&, std::span<const std::uint8_t>);

// -- optimiser ---------------------------------------------------------------

template <class Real>
void adam_step(std::span<const std::span<Real>> params, std::span<const std::span<Real>> grads,
               BasicAdamState<Real>& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.size(), Real(0));
      state.second.emplace_back(p.size(), Real(0));
    }
  }
  if (state.first.size() != params.size()) throw StateError("adam_step: optimiser state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    auto g = grads[i];
    auto& m = state.first[i];
    auto& v = state.second[i];
    if (p.size() != g.size() || m.size() != p.size()) throw ShapeError("adam_step: tensor size mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      m[j] = static_cast<Real>(state.beta1 * m[j] + (1.0 - state.beta1) * gj);
      v[j] = static_cast<Real>(state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj);
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      p[j] = static_cast<Real>(p[j] - state.lr * mh / (std::sqrt(vh) + state.eps));
    }
  }
}

template <class Real>
void adam_step(BasicModel<Real>& model, BasicModel<Real>& grads, BasicAdamState<Real>& state) {
  std::vector<std::span<Real>> p, g;
  for_each_parameter_pair(model, grads, [&](std::span<Real> a, std::span<Real> b) {
    p.push_back(a);
    g.push_back(b);
  });
  adam_step<Real>(std::span<const std::span<Real>>(p), std::span<const std::span<Real>>(g), state);
}

template void adam_step(std::span<const std::span<float>>, std::span<const std::span<float>>,
                        BasicAdamState<float>&);
template void adam_step(std::span<const std::span<double>>, std::span<const std::span<double>>,
                        BasicAdamState<double>&);
template void adam_step(Model&, Model&, BasicAdamState<float>&);
template void adam_step(Model64&, Model64&, BasicAdamState<double>&);

// -- schedule ----------------------------------------------------------------

std::string_view to_string(Stage stage) { return stage == Stage::warmup ? "warmup" : "main"; }

std::string_view to_string(ScheduleAction action) {
  switch (action) {
    case ScheduleAction::continue_training: return "continue";
    case ScheduleAction::rollback_to_best: return "rollback_to_best";
    case ScheduleAction::switch_to_main: return "switch_to_main";
    case ScheduleAction::decay_lr: return "decay_lr";
    case ScheduleAction::stop: return "stop";
  }
  return "?";
}

std::string format_actions(std::span<const ScheduleAction> actions) {
  std::string out;
  for (const auto a : actions) {
    if (!out.empty()) out += '+';
    out += to_string(a);
  }
  return out;
}

std::vector<ScheduleAction> schedule_epoch(ScheduleState& state, double cv_loss,
                                           const ScheduleOptions& o) {
  state.improved = cv_loss < state.best_cv_loss;
  if (state.improved) {
    state.best_cv_loss = cv_loss;
    state.epochs_since_improve = 0;
    if (state.stage == Stage::warmup) state.lr *= o.growth;
    return {ScheduleAction::continue_training};
  }
  ++state.epochs_since_improve;
  if (state.stage == Stage::warmup) {
    if (state.epochs_since_improve < o.warmup_patience) return {ScheduleAction::continue_training};
    state.stage = Stage::main;
    state.epochs_since_improve = 0;
    return {ScheduleAction::rollback_to_best, ScheduleAction::switch_to_main};
  }
  if (state.epochs_since_improve >= o.stop_patience) return {ScheduleAction::stop};
  if (state.epochs_since_improve % o.decay_patience == 0) {
    state.lr *= o.decay;
    return {ScheduleAction::decay_lr};
  }
  return {ScheduleAction::continue_training};
}

// -- training loop -----------------------------------------------------------

std::string format_epoch(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch=%zu stage=%s lr=%.6g train_loss=%.6f cv_loss=%.6f action=",
                e.epoch, std::string(to_string(e.stage)).c_str(), e.lr, e.train_loss, e.cv_loss);
  return buf + format_actions(e.actions);
}

LabeledExample prepare_example(const Utterance& utt, const ModelConfig& config,
                               const LabelWindow& window) {
  LabeledExample ex;
  const auto mfcc = extract_features(utt.audio);
  if (mfcc.rows() != config.feature_dim) {
    throw ConfigError("model expects " + std::to_string(config.feature_dim) +
                      " coefficients per frame, frontend gives " + std::to_string(mfcc.rows()));
  }
  ex.features = concat_context(mfcc, config.context, EdgeMode::zero);
  ex.labels = make_labels(utt, ex.features.cols(), window);
  return ex;
}

bool in_cv_split(std::size_t index, double cv_fraction) {
  const auto bucket = static_cast<double>(mix64(index) % 1000000) / 1e6;
  return bucket < cv_fraction;
}

FrameMetrics evaluate_frames(const Model& model, std::span<const LabeledExample> examples) {
  FrameMetrics m;
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    const auto post = forward(model, ex.features);
    for (std::size_t t = 0; t < post.cols(); ++t) {
      const std::size_t y = ex.labels[t];
      loss -= std::log(std::max<double>(post(y, t), 1e-300));
      std::size_t best = 0;
      for (std::size_t c = 1; c < post.rows(); ++c) {
        if (post(c, t) > post(best, t)) best = c;
      }
      correct += best == y;
    }
    m.frames += post.cols();
  }
  if (m.frames == 0) throw DataError("no frames to evaluate");
  m.loss = loss / static_cast<double>(m.frames);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.frames);
  return m;
}

namespace {

struct Prepared {
  LabeledExample example;
  std::optional<LabeledExample> dropped;  // positives only
};

}  // namespace

TrainResult train(const ModelConfig& config, std::span<const Utterance> dataset,
                  const TrainOptions& options, std::ostream* log) {
  config.validate();
  if (options.batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (options.cv_fraction <= 0.0 || options.cv_fraction >= 1.0) {
    throw ConfigError("cv fraction must lie in (0, 1)");
  }

  std::vector<Prepared> train_set;
  std::vector<LabeledExample> cv_set;
  std::size_t train_pos = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& utt = dataset[i];
    if (in_cv_split(i, options.cv_fraction)) {
      cv_set.push_back(prepare_example(utt, config, options.labels));
      continue;
    }
    Prepared p{prepare_example(utt, config, options.labels), std::nullopt};
    if (utt.is_positive && utt.keyword && options.keyword_drop > 0.0) {
      p.dropped = prepare_example(excise_keyword(utt), config, options.labels);
    }
    train_pos += utt.is_positive;
    train_set.push_back(std::move(p));
  }
  if (train_set.empty() || cv_set.empty()) {
    throw DataError("dataset of " + std::to_string(dataset.size()) +
                    " utterances leaves an empty training or CV split");
  }

  Rng rng(options.seed);
  TrainResult result;
  result.model = build(config, rng);
  Model model = result.model;

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "# arch=%s params=%zu train_utts=%zu (pos=%zu) cv_utts=%zu batch=%zu max_epochs=%zu seed=%llu",
                std::string(to_string(config.arch)).c_str(), count_params(config).total(),
                train_set.size(), train_pos, cv_set.size(), options.batch_size, options.max_epochs,
                static_cast<unsigned long long>(options.seed));
  result.header.emplace_back(buf);
  std::snprintf(buf, sizeof buf,
                "# adam lr0=%g warmup x%.2f/improve, rollback after %zu flat; main x%.2f per %zu flat, stop after %zu",
                options.adam.lr, options.schedule.growth, options.schedule.warmup_patience,
                options.schedule.decay, options.schedule.decay_patience, options.schedule.stop_patience);
  result.header.emplace_back(buf);
  std::snprintf(buf, sizeof buf, "# keyword_drop=%.2f label_frames=%zu label_end_offset=%zu",
                options.keyword_drop, options.labels.length, options.labels.end_offset);
  result.header.emplace_back(buf);

  result.best_cv = evaluate_frames(model, cv_set);
  result.initial_cv_loss = result.best_cv.loss;
  std::snprintf(buf, sizeof buf, "# initial cv_loss=%.6f cv_acc=%.4f", result.best_cv.loss,
                result.best_cv.accuracy);
  result.header.emplace_back(buf);
  if (log) {
    for (const auto& h : result.header) *log << h << '\n';
    log->flush();
  }

  ScheduleState schedule;
  schedule.lr = options.adam.lr;
  schedule.best_cv_loss = result.initial_cv_loss;
  AdamState adam(options.adam);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    adam.lr = schedule.lr;

    EpochLog entry;
    entry.epoch = epoch;
    entry.stage = schedule.stage;
    entry.lr = schedule.lr;

    double loss_sum = 0.0;
    std::size_t frame_sum = 0;
    std::vector<Matrix> feats;
    std::vector<std::vector<std::uint8_t>> labels;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      feats.clear();
      labels.clear();
      std::size_t frames = 0;
      for (std::size_t j = start; j < std::min(order.size(), start + options.batch_size); ++j) {
        const auto& p = train_set[order[j]];
        const bool drop = p.dropped && rng.bernoulli(options.keyword_drop);
        const auto& ex = drop ? *p.dropped : p.example;
        feats.push_back(ex.features);
        labels.push_back(ex.labels);
        frames += ex.features.cols();
      }
      Model grads = zeros_like(model);
      const float loss = forward_backward(model, std::span<const Matrix>(feats),
                                          std::span<const std::vector<std::uint8_t>>(labels), grads, true);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                              ": minibatch loss is " + std::to_string(loss) + " at lr " +
                              std::to_string(schedule.lr));
      }
      adam_step(model, grads, adam);
      loss_sum += static_cast<double>(loss) * static_cast<double>(frames);
      frame_sum += frames;
    }
    entry.train_loss = loss_sum / static_cast<double>(frame_sum);

    const FrameMetrics cv = evaluate_frames(model, cv_set);
    entry.cv_loss = cv.loss;
    entry.cv_accuracy = cv.accuracy;
    if (!std::isfinite(cv.loss)) throw DivergenceError("CV loss is not finite at epoch " + std::to_string(epoch));
    entry.actions = schedule_epoch(schedule, cv.loss, options.schedule);
    if (schedule.improved) {
      result.model = model;
      result.best_cv = cv;
    }
    bool stop = false;
    for (const auto a : entry.actions) {
      if (a == ScheduleAction::rollback_to_best) {
        model = result.model;
        adam.clear_moments();
      }
      stop |= a == ScheduleAction::stop;
    }
    if (log) {
      *log << format_epoch(entry) << '\n';
      log->flush();
    }
    result.epochs.push_back(std::move(entry));
    if (stop) break;
  }
  return result;
}

// -- gradient oracle ---------------------------------------------------------

GradCheckReport check_gradients(std::span<const std::span<double>> params,
                                std::span<const std::span<const double>> analytic,
                                const std::function<double()>& loss,
                                const GradCheckOptions& options) {
  if (params.size() != analytic.size()) throw ShapeError("check_gradients: tensor count mismatch");
  GradCheckReport r;
  const double h = options.step;
  std::size_t index = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != analytic[i].size()) throw ShapeError("check_gradients: tensor size mismatch");
    for (std::size_t j = 0; j < params[i].size(); ++j, ++index) {
      double& p = params[i][j];
      const double saved = p;
      p = saved + h;
      const double up = loss();
      p = saved - h;
      const double down = loss();
      p = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_index = index;
      }
    }
  }
  r.parameters = index;
  return r;
}

double min_relu_margin(const Model64& model, std::span<const Matrix64> inputs) {
  double margin = std::numeric_limits<double>::infinity();
  auto scan = [&](Activation g, const Matrix64& pre) {
    if (g != Activation::relu) return;
    for (double v : pre.values()) margin = std::min(margin, std::abs(v));
  };
  std::vector<Matrix64> acts(inputs.begin(), inputs.end());
  for (const auto& block : model.blocks) {
    std::vector<Matrix64> outs;
    for (const auto& x : acts) {
      UnitCache<double> cache;
      outs.push_back(unit_forward(block.unit, x, &cache));
      scan(block.unit.first, cache.feature_pre);
      scan(block.unit.second, cache.time_pre);
    }
    acts = batchnorm_forward_batch(block.norm, std::span<const Matrix64>(outs));
  }
  return margin;
}

GradCheckReport grad_check(const Model& model, std::span<const Matrix> inputs,
                           std::span<const std::vector<std::uint8_t>> labels,
                           const GradCheckOptions& options) {
  Model64 m = model_cast<double>(model);
  std::vector<Matrix64> feats;
  for (const auto& x : inputs) feats.push_back(matrix_cast<double>(x));

  double margin = min_relu_margin(m, feats);
  if (options.kink_guard) {
    Rng rng(mix64(options.seed ^ 0x6b696e6bULL));
    for (int attempt = 0; attempt < 500 && margin < options.kink_margin; ++attempt) {
      for (auto& x : feats) {
        for (auto& v : x.values()) v += 0.05 * rng.normal();
      }
      margin = min_relu_margin(m, feats);
    }
    if (margin < options.kink_margin) {
      throw StateError("could not move ReLU pre-activations away from the kink");
    }
  }

  const std::span<const Matrix64> fs(feats);
  Model64 grads = zeros_like(m);
  forward_backward(m, fs, labels, grads, false);

  std::vector<std::span<double>> params;
  std::vector<std::span<const double>> analytic;
  for_each_parameter_pair(m, grads, [&](std::span<double> p, std::span<double> g) {
    params.push_back(p);
    analytic.emplace_back(g.data(), g.size());
  });
  auto report = check_gradients(params, analytic, [&] { return minibatch_loss(m, fs, labels); }, options);
  report.min_relu_margin = margin;
  return report;
}

}  // namespace kws
