#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kws/frontend.hpp"
#include "kws/network.hpp"

namespace kws {

/// Raised when the training loss stops being finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

struct SampleSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  bool operator==(const SampleSpan&) const = default;
};

struct Utterance {
  AudioBuffer audio;
  std::optional<std::size_t> keyword_end_frame;  // set iff positive
  std::optional<SampleSpan> keyword;             // samples of the phrase, when known
  bool is_positive = false;

  bool operator==(const Utterance&) const = default;
};

/// Frame index at which a phrase ending at `end_sample` ends: the number of
/// analysis windows that lie entirely before that sample.
std::size_t keyword_end_frame_for(std::size_t end_sample, const FrameSpec& spec = {});

/// Target frames are [end - end_offset - length, end - end_offset), clipped
/// at 0. The default marks the 30 frames immediately before the phrase end.
struct LabelWindow {
  std::size_t length = 30;
  std::size_t end_offset = 0;
};

/// 1 for target frames of a positive utterance, 0 elsewhere.
std::vector<std::uint8_t> make_labels(const Utterance& utt, std::size_t frames,
                                      const LabelWindow& window = {});

/// The utterance with its phrase samples removed, marked negative.
Utterance excise_keyword(const Utterance& utt);

/// With the given probability returns excise_keyword(utt), otherwise utt.
Utterance drop_keyword(const Utterance& utt, Rng& rng, double probability = 0.5);

/// Synthetic stand-in corpus. A positive holds the "phrase" (three 200 ms
/// tones at 440, 880 and 660 Hz) after a noise lead-in, followed by a noise
/// "query"; a negative is either noise alone or the tones in another order.
struct SynthOptions {
  std::vector<double> tone_hz = {440.0, 880.0, 660.0};
  double tone_ms = 200.0;
  double ramp_ms = 10.0;
  double amplitude = 0.5;
  double lead_min_s = 0.2, lead_max_s = 1.0;
  double tail_min_s = 0.5, tail_max_s = 2.0;
  double snr_min_db = 5.0, snr_max_db = 20.0;
  std::vector<double> gains_db = {-32.0, -20.0, 0.0};
  double shuffled_fraction = 0.5;  // share of negatives with reordered tones
};

/// n_pos positives followed by n_neg negatives, fully determined by `seed`.
std::vector<Utterance> synth_dataset(std::uint64_t seed, std::size_t n_pos, std::size_t n_neg,
                                     const SynthOptions& options = {});

/// Endless source of keyword-free synthetic audio, one utterance at a time.
class NegativeStream {
 public:
  explicit NegativeStream(std::uint64_t seed, SynthOptions options = {});
  AudioBuffer next();

 private:
  Rng rng_;
  SynthOptions options_;
};

/// Dataset manifest, one record per line ('#' starts a comment):
///   <wav path> <label 0|1> <keyword_end_frame|-> [<keyword_begin_sample> <keyword_end_sample>]
///   synth seed=<s> pos=<n> neg=<m>
/// Paths are relative to the manifest's directory. A synth record expands to
/// synth_dataset(s, n, m).
std::vector<Utterance> read_manifest(const std::filesystem::path& path);

/// Writes utt_NNNNN.wav files and manifest.tsv into `dir`; returns the
/// manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                    std::span<const Utterance> dataset);

// -- loss --------------------------------------------------------------------

template <class Real>
struct LossResult {
  Real loss = 0;
  BasicMatrix<Real> grad_logits;  // classes x T
};

/// Mean per-frame cross entropy of `posteriors` (classes x T) against
/// `labels`; the gradient with respect to the logits is (p - onehot) / T.
template <class Real>
LossResult<Real> cross_entropy(const BasicMatrix<Real>& posteriors,
                               std::span<const std::uint8_t> labels);

// -- optimiser ---------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Real>
struct BasicAdamState {
  std::size_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<Real>> first;
  std::vector<std::vector<Real>> second;

  explicit BasicAdamState(const AdamOptions& o = {})
      : lr(o.lr), beta1(o.beta1), beta2(o.beta2), eps(o.eps) {}
  void clear_moments() {
    step = 0;
    first.clear();
    second.clear();
  }
};

using AdamState = BasicAdamState<float>;

/// Bias-corrected Adam over matching lists of parameter and gradient tensors.
template <class Real>
void adam_step(std::span<const std::span<Real>> params, std::span<const std::span<Real>> grads,
               BasicAdamState<Real>& state);

template <class Real>
void adam_step(BasicModel<Real>& model, BasicModel<Real>& grads, BasicAdamState<Real>& state);

// -- schedule ----------------------------------------------------------------

enum class Stage { warmup, main };
enum class ScheduleAction { continue_training, rollback_to_best, switch_to_main, decay_lr, stop };

std::string_view to_string(Stage stage);
std::string_view to_string(ScheduleAction action);
/// Actions joined with '+', e.g. "rollback_to_best+switch_to_main".
std::string format_actions(std::span<const ScheduleAction> actions);

struct ScheduleOptions {
  double growth = 1.4;               // warm-up lr factor per improving epoch
  std::size_t warmup_patience = 8;   // flat epochs before rollback + main stage
  double decay = 0.5;                // main-stage lr factor
  std::size_t decay_patience = 4;    // flat epochs per decay
  std::size_t stop_patience = 8;     // flat epochs before stopping
};

struct ScheduleState {
  Stage stage = Stage::warmup;
  double lr = 1e-3;
  double best_cv_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improve = 0;
  bool improved = false;  // whether the last epoch set a new best
};

/// Warm-up: an improving epoch multiplies lr by 1.4; 8 consecutive flat
/// epochs roll back to the best snapshot and switch to the main stage.
/// Main: every 4th consecutive flat epoch halves lr; the 8th stops training.
/// "Improving" means strictly below the best CV loss so far.
std::vector<ScheduleAction> schedule_epoch(ScheduleState& state, double cv_loss,
                                           const ScheduleOptions& options = {});

// -- training loop -----------------------------------------------------------

struct TrainOptions {
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 40;
  double cv_fraction = 0.1;
  double keyword_drop = 0.5;
  LabelWindow labels;
  AdamOptions adam;
  ScheduleOptions schedule;
};

struct EpochLog {
  std::size_t epoch = 0;
  Stage stage = Stage::warmup;
  double lr = 0;
  double train_loss = 0;
  double cv_loss = 0;
  double cv_accuracy = 0;
  std::vector<ScheduleAction> actions;
};

std::string format_epoch(const EpochLog& e);

/// Context-stacked features and frame labels for one utterance.
struct LabeledExample {
  FeatureSequence features;
  std::vector<std::uint8_t> labels;
};

/// MFCC + zero-edge context stacking (the streaming convention) + labels.
LabeledExample prepare_example(const Utterance& utt, const ModelConfig& config,
                               const LabelWindow& window = {});

/// Whether utterance `index` belongs to the cross-validation split.
bool in_cv_split(std::size_t index, double cv_fraction);

struct FrameMetrics {
  double loss = 0;
  double accuracy = 0;
  std::size_t frames = 0;
};

/// Inference-mode loss and frame accuracy.
FrameMetrics evaluate_frames(const Model& model, std::span<const LabeledExample> examples);

struct TrainResult {
  Model model;  // best-CV snapshot
  std::vector<EpochLog> epochs;
  std::vector<std::string> header;
  double initial_cv_loss = 0;
  FrameMetrics best_cv;
};

/// Minibatch Adam training with the two-stage schedule. When `log` is given,
/// header lines (prefixed '#') and one line per epoch are written to it.
TrainResult train(const ModelConfig& config, std::span<const Utterance> dataset,
                  const TrainOptions& options, std::ostream* log = nullptr);

// -- gradient oracle ---------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-4;
  /// Floor for the relative-error denominator max(|analytic|, |numeric|, floor).
  double floor = 1e-8;
  /// Nudge the inputs until every ReLU pre-activation is at least
  /// `kink_margin` away from zero.
  bool kink_guard = false;
  double kink_margin = 1e-3;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t parameters = 0;
  std::size_t worst_index = 0;
  double min_relu_margin = 0;  // smallest |pre-activation| at a ReLU
};

/// Central differences of `loss` over every element of `params` compared
/// with `analytic`. All arithmetic is 64-bit.
GradCheckReport check_gradients(std::span<const std::span<double>> params,
                                std::span<const std::span<const double>> analytic,
                                const std::function<double()>& loss,
                                const GradCheckOptions& options = {});

/// Converts `model` to 64-bit and checks forward_backward (train-mode batch
/// norm, no statistics update) against central differences on every
/// parameter.
GradCheckReport grad_check(const Model& model, std::span<const Matrix> inputs,
                           std::span<const std::vector<std::uint8_t>> labels,
                           const GradCheckOptions& options = {});

/// Smallest |pre-activation| feeding a ReLU anywhere in the 64-bit train-mode
/// forward pass.
double min_relu_margin(const Model64& model, std::span<const Matrix64> inputs);

}  // namespace kws
