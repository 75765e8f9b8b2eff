#include "kws/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <vector>

#include "CLI11.hpp"
#include "kws/evaluation.hpp"
#include "kws/verify.hpp"

namespace kws::cli {
namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct ConfigFlags {
  std::string preset = "paper";
  std::string arch = "s1dcnn";
  std::size_t lookahead = 0;
  std::optional<std::size_t> depth, filters, memory, context;

  void add(CLI::App* app) {
    app->add_option("--config", preset, "Configuration preset")->check(CLI::IsMember({"paper"}));
    app->add_option("--arch", arch, "svdf or s1dcnn")->check(CLI::IsMember({"svdf", "s1dcnn"}));
    app->add_option("--lookahead", lookahead, "Lookahead L per block");
    app->add_option("--depth", depth, "Override the number of blocks D");
    app->add_option("--filters", filters, "Override filters per block N");
    app->add_option("--memory", memory, "Override time-filter length K");
    app->add_option("--context", context, "Override context frames C");
  }

  ModelConfig resolve() const {
    ModelConfig c = ModelConfig::paper(lookahead, parse_arch(arch));
    if (depth) c.depth = *depth;
    if (filters) c.filters = *filters;
    if (memory) c.memory = *memory;
    if (context) c.context = *context;
    c.validate();
    return c;
  }
};

struct SynthFlags {
  std::uint64_t seed = 0;
  std::size_t pos = 500;
  std::size_t neg = 500;
  std::string out;
};

struct FeaturesFlags {
  std::string wav;
  std::string out;
  std::size_t context = 0;
  std::string edge = "replicate";
};

struct TrainFlags {
  ConfigFlags config;
  std::uint64_t seed = 0;
  std::string manifest;
  std::size_t pos = 500;
  std::size_t neg = 500;
  std::size_t epochs = 40;
  std::size_t batch = 32;
  double lr = 1e-3;
  double keyword_drop = 0.5;
  std::size_t label_offset = 0;
  std::string out;
  std::string log;
};

struct EvalFlags {
  std::string model;
  std::uint64_t seed = 0;
  std::string manifest;
  std::size_t pos = 200;
  double neg_hours = 2.0;
  double suppression_ms = kDefaultSuppressionMs;
  std::string det;
};

struct DetectFlags {
  std::string model;
  std::string wav;
  bool use_stdin = false;
  float threshold = 0.5f;
  double suppression_ms = kDefaultSuppressionMs;
};

struct InfoFlags {
  ConfigFlags config;
  std::string model;
  bool json = false;
};

struct GradFlags {
  std::uint64_t seed = 0;
  std::size_t feature_dim = 4, context = 1, depth = 2, filters = 3, memory = 3, lookahead = 1;
  std::size_t frames = 12, batch = 2;
  bool kink_guard = false;
  double tolerance = 1e-3;
};

struct EquivFlags {
  std::size_t seeds = 100;
  std::uint64_t seed = 0;
  bool bias_control = false;
  double tolerance = 1e-5;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  const auto data = synth_dataset(f.seed, f.pos, f.neg);
  const auto manifest = write_dataset(f.out, data);
  out << "utterances=" << data.size() << " pos=" << f.pos << " neg=" << f.neg
      << " manifest=" << manifest.string() << '\n';
  return kExitOk;
}

int cmd_features(const FeaturesFlags& f, std::ostream& out) {
  const auto audio = read_wav(f.wav);
  auto feats = extract_features(audio);
  if (f.context > 0) {
    feats = concat_context(feats, f.context, f.edge == "zero" ? EdgeMode::zero : EdgeMode::replicate);
  }
  write_features(f.out, feats);
  out << "frames=" << feats.cols() << " dim=" << feats.rows() << '\n';
  return kExitOk;
}

int cmd_train(const TrainFlags& f, std::ostream& out, std::ostream& err) {
  const ModelConfig config = f.config.resolve();
  TrainOptions opts;
  opts.seed = f.seed;
  opts.max_epochs = f.epochs;
  opts.batch_size = f.batch;
  opts.adam.lr = f.lr;
  opts.keyword_drop = f.keyword_drop;
  opts.labels.end_offset = f.label_offset;
  if (opts.batch_size == 0) throw ConfigError("--batch-size must be >= 1");
  if (!(f.lr > 0.0)) throw ConfigError("--lr must be positive");
  if (f.keyword_drop < 0.0 || f.keyword_drop > 1.0) throw ConfigError("--keyword-drop must lie in [0, 1]");

  std::ofstream log_file;
  if (!f.log.empty()) {
    log_file.open(f.log, std::ios::trunc);
    if (!log_file) throw IoError("cannot create " + f.log);
  }
  const auto dataset = f.manifest.empty() ? synth_dataset(f.seed, f.pos, f.neg) : read_manifest(f.manifest);

  const auto start = std::chrono::steady_clock::now();
  const auto result = train(config, dataset, opts, f.log.empty() ? &out : &log_file);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save(result.model, f.out);
  out << "model=" << f.out << " epochs=" << result.epochs.size()
      << " best_cv_loss=" << fmt("%.6f", result.best_cv.loss)
      << " cv_accuracy=" << fmt("%.4f", result.best_cv.accuracy) << '\n';
  err << "trained in " << fmt("%.1f", secs) << " s\n";
  return kExitOk;
}

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  if (!(f.neg_hours >= 0.0)) throw ConfigError("--neg-hours must be non-negative");
  const Model model = load(f.model);
  std::vector<float> pos_scores;
  std::vector<NegativeTrace> negatives;
  if (!f.manifest.empty()) {
    for (const auto& u : read_manifest(f.manifest)) {
      if (u.is_positive) pos_scores.push_back(score_positive(model, u.audio));
      else negatives.push_back(score_negative(model, u.audio));
    }
  } else {
    for (const auto& u : synth_dataset(mix64(f.seed), f.pos, 0)) {
      pos_scores.push_back(score_positive(model, u.audio));
    }
  }
  if (f.neg_hours > 0.0) {
    NegativeStream source(f.seed);
    negatives.push_back(score_negative_stream(model, source, f.neg_hours));
  }
  double hours = 0.0;
  for (const auto& n : negatives) hours += n.hours;
  if (pos_scores.empty()) throw DataError("evaluation set has no positive utterances");
  if (!(hours > 0.0)) throw DataError("evaluation set has no negative audio");
  const auto supp = suppression_frames(f.suppression_ms, model.config.frame_hop_ms);
  const auto report = make_report(det_curve(pos_scores, negatives, supp), pos_scores.size(), hours);
  if (!f.det.empty()) emit_det(report, f.det);
  out << summary_line(report) << '\n';
  return kExitOk;
}

int cmd_detect(const DetectFlags& f, std::ostream& out, std::istream& in) {
  if (f.wav.empty() == !f.use_stdin) throw ConfigError("detect needs exactly one of --wav or --stdin");
  if (f.threshold < 0.0f || f.threshold > 1.0f) throw ConfigError("--threshold must lie in [0, 1]");
  const Model model = load(f.model);
  Detector detector(model, f.threshold, f.suppression_ms);
  FeatureStream features;
  auto print = [&](const TriggerEvent& e) {
    out << "frame=" << e.frame_index << " time_ms=" << fmt("%.0f", e.time_ms)
        << " score=" << fmt("%.6f", e.score) << '\n';
  };
  auto feed = [&](std::span<const float> samples) {
    for (const auto& frame : features.push(samples)) {
      if (auto e = detector.push_frame(frame)) print(*e);
    }
  };
  if (f.use_stdin) {
    std::vector<std::uint8_t> buf(1 << 14);
    std::vector<std::uint8_t> carry;
    while (in) {
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      const auto got = static_cast<std::size_t>(in.gcount());
      if (got == 0) break;
      carry.insert(carry.end(), buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(got));
      const std::size_t even = carry.size() & ~std::size_t{1};
      feed(decode_pcm16(std::span(carry.data(), even)));
      carry.erase(carry.begin(), carry.begin() + static_cast<std::ptrdiff_t>(even));
    }
  } else {
    feed(read_wav(f.wav).samples);
  }
  for (const auto& e : detector.flush()) print(e);
  return kExitOk;
}

int cmd_info(const InfoFlags& f, std::ostream& out) {
  ModelConfig config;
  if (!f.model.empty()) config = load(f.model).config;
  else config = f.config.resolve();
  const auto info = describe(config);
  out << (f.json ? format_info_json(info) + "\n" : format_info(info));
  return kExitOk;
}

int cmd_grad(const GradFlags& f, std::ostream& out) {
  ModelConfig c;
  c.feature_dim = f.feature_dim;
  c.context = f.context;
  c.depth = f.depth;
  c.filters = f.filters;
  c.memory = f.memory;
  c.lookahead = f.lookahead;
  c.validate();
  if (f.frames == 0 || f.batch == 0) throw ConfigError("--frames and --batch must be >= 1");
  Rng rng(f.seed);
  const Model model = random_model(c, rng);
  std::vector<Matrix> inputs;
  std::vector<std::vector<std::uint8_t>> labels;
  for (std::size_t b = 0; b < f.batch; ++b) {
    inputs.push_back(random_sequence(rng, c.input_dim(), f.frames, f.frames));
    std::vector<std::uint8_t> y(f.frames);
    for (auto& v : y) v = static_cast<std::uint8_t>(rng.below(c.classes));
    labels.push_back(std::move(y));
  }
  GradCheckOptions opts;
  opts.kink_guard = f.kink_guard;
  opts.seed = f.seed;
  const auto r = grad_check(model, inputs, labels, opts);
  const bool pass = r.max_rel_error < f.tolerance;
  out << "parameters=" << r.parameters << " max_rel_error=" << fmt("%.3e", r.max_rel_error)
      << " max_abs_error=" << fmt("%.3e", r.max_abs_error)
      << " min_relu_margin=" << fmt("%.3e", r.min_relu_margin)
      << " tolerance=" << fmt("%g", f.tolerance) << " result=" << (pass ? "pass" : "fail") << '\n';
  return pass ? kExitOk : kExitRuntime;
}

int cmd_equiv(const EquivFlags& f, std::ostream& out) {
  const auto r = verify_equivalence(f.seeds, f.seed, f.bias_control);
  // The control run passes when the biased reduction is visibly different.
  const bool pass = f.bias_control ? r.max_deviation > 1e-3 : r.max_deviation < f.tolerance;
  out << "seeds=" << r.seeds << " max_deviation=" << fmt("%.3e", r.max_deviation)
      << " worst_seed=" << r.worst_seed
      << " tolerance=" << fmt("%g", f.bias_control ? 1e-3 : f.tolerance)
      << (f.bias_control ? " control=bias" : "") << " result=" << (pass ? "pass" : "fail") << '\n';
  return pass ? kExitOk : kExitRuntime;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err, std::istream& in) {
  CLI::App app{"Streaming keyword spotting with SVDF and stacked 1D CNN layers", "kws"};
  app.require_subcommand(1);
  app.allow_extras(false);

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic WAV dataset and manifest");
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--pos", synth.pos, "Positive utterances");
  synth_cmd->add_option("--neg", synth.neg, "Negative utterances");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  FeaturesFlags feats;
  auto* feats_cmd = app.add_subcommand("features", "Dump MFCC features of a WAV file");
  feats_cmd->add_option("--wav", feats.wav, "Input WAV (16 kHz mono 16-bit)")->required();
  feats_cmd->add_option("--out", feats.out, "Output feature file")->required();
  feats_cmd->add_option("--context", feats.context, "Stack C frames on each side");
  feats_cmd->add_option("--edge", feats.edge, "Context padding")->check(CLI::IsMember({"replicate", "zero"}));

  TrainFlags tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  tr.config.add(train_cmd);
  train_cmd->add_option("--seed", tr.seed, "Seed for data synthesis and training");
  train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest (default: synthetic data)");
  train_cmd->add_option("--pos", tr.pos, "Synthetic positives");
  train_cmd->add_option("--neg", tr.neg, "Synthetic negatives");
  train_cmd->add_option("--epochs", tr.epochs, "Maximum epochs");
  train_cmd->add_option("--batch-size", tr.batch, "Utterances per minibatch");
  train_cmd->add_option("--lr", tr.lr, "Initial learning rate");
  train_cmd->add_option("--keyword-drop", tr.keyword_drop, "Probability of removing the phrase from a positive");
  train_cmd->add_option("--label-offset", tr.label_offset, "Frames between the target window and the phrase end");
  train_cmd->add_option("--out", tr.out, "Output model file")->required();
  train_cmd->add_option("--log", tr.log, "Training log file (default: stdout)");

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "DET curve and FRR at 1 false alarm per hour");
  eval_cmd->add_option("--model", ev.model, "Model file")->required();
  eval_cmd->add_option("--seed", ev.seed, "Seed for the synthetic evaluation data");
  eval_cmd->add_option("--manifest", ev.manifest, "Evaluation manifest (default: synthetic data)");
  eval_cmd->add_option("--pos", ev.pos, "Synthetic positives");
  eval_cmd->add_option("--neg-hours", ev.neg_hours, "Hours of synthetic negative audio");
  eval_cmd->add_option("--suppression-ms", ev.suppression_ms, "Refractory window between events");
  eval_cmd->add_option("--det", ev.det, "Write the DET curve as CSV");

  DetectFlags det;
  auto* detect_cmd = app.add_subcommand("detect", "Stream audio and print trigger events");
  detect_cmd->add_option("--model", det.model, "Model file")->required();
  detect_cmd->add_option("--wav", det.wav, "Input WAV");
  detect_cmd->add_flag("--stdin", det.use_stdin, "Read raw 16-bit little-endian mono 16 kHz PCM");
  detect_cmd->add_option("--threshold", det.threshold, "Score threshold");
  detect_cmd->add_option("--suppression-ms", det.suppression_ms, "Refractory window between events");

  InfoFlags info;
  auto* info_cmd = app.add_subcommand("info", "Parameter, MAC and receptive-field accounting");
  info.config.add(info_cmd);
  info_cmd->add_option("--model", info.model, "Describe a saved model instead");
  info_cmd->add_flag("--json", info.json, "JSON output");

  GradFlags gc;
  auto* grad_cmd = app.add_subcommand("grad-check", "Compare backprop with 64-bit finite differences");
  grad_cmd->add_option("--seed", gc.seed, "Random seed");
  grad_cmd->add_option("--feature-dim", gc.feature_dim, "F0");
  grad_cmd->add_option("--context", gc.context, "C");
  grad_cmd->add_option("--depth", gc.depth, "D");
  grad_cmd->add_option("--filters", gc.filters, "N");
  grad_cmd->add_option("--memory", gc.memory, "K");
  grad_cmd->add_option("--lookahead", gc.lookahead, "L");
  grad_cmd->add_option("--frames", gc.frames, "Frames per sequence");
  grad_cmd->add_option("--batch", gc.batch, "Sequences per minibatch");
  grad_cmd->add_flag("--kink-guard", gc.kink_guard, "Keep ReLU inputs away from zero");
  grad_cmd->add_option("--tolerance", gc.tolerance, "Maximum relative error");

  EquivFlags eq;
  auto* equiv_cmd = app.add_subcommand("verify-equivalence", "SVDF vs reduced S1DCNN on random networks");
  equiv_cmd->add_option("--seeds", eq.seeds, "Number of random networks");
  equiv_cmd->add_option("--seed", eq.seed, "First seed");
  equiv_cmd->add_flag("--bias-control", eq.bias_control, "Negative control: give the reduction nonzero biases");
  equiv_cmd->add_option("--tolerance", eq.tolerance, "Maximum deviation");

  std::vector<const char*> argv{"kws"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth, out);
    if (feats_cmd->parsed()) return cmd_features(feats, out);
    if (train_cmd->parsed()) return cmd_train(tr, out, err);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (detect_cmd->parsed()) return cmd_detect(det, out, in);
    if (info_cmd->parsed()) return cmd_info(info, out);
    if (grad_cmd->parsed()) return cmd_grad(gc, out);
    if (equiv_cmd->parsed()) return cmd_equiv(eq, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr, std::cin);
}

}  // namespace kws::cli
