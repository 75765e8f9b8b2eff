#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "kws/training.hpp"
#include "kws/verify.hpp"
#include "support.hpp"

using namespace kws;

namespace {

using A = ScheduleAction;

Utterance positive_at(std::size_t end_frame) {
  Utterance u;
  u.audio.samples.assign(16000, 0.0f);
  u.is_positive = true;
  u.keyword_end_frame = end_frame;
  return u;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.feature_dim = 13;
  c.context = 1;
  c.depth = 2;
  c.filters = 6;
  c.memory = 4;
  c.lookahead = 1;
  return c;
}

Matrix64 softmax_columns(const Matrix64& z) {
  Matrix64 p(z.rows(), z.cols());
  for (std::size_t t = 0; t < z.cols(); ++t) {
    std::vector<double> col(z.rows());
    for (std::size_t c = 0; c < z.rows(); ++c) col[c] = z(c, t);
    const auto s = softmax<double>(col);
    for (std::size_t c = 0; c < z.rows(); ++c) p(c, t) = s[c];
  }
  return p;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

}  // namespace

TEST_CASE("keyword end frame counts complete windows") {
  for (std::size_t end : {0u, 399u, 400u, 559u, 560u, 16000u, 12345u}) {
    std::size_t windows = 0;
    for (std::size_t start = 0; start + 400 <= end; start += 160) ++windows;
    CHECK(keyword_end_frame_for(end) == windows);
  }
}

TEST_CASE("label window") {
  const auto l = make_labels(positive_at(50), 100);
  for (std::size_t t = 0; t < 100; ++t) CHECK(l[t] == (t >= 20 && t < 50 ? 1 : 0));
  const auto shifted = make_labels(positive_at(50), 100, LabelWindow{10, 5});
  for (std::size_t t = 0; t < 100; ++t) CHECK(shifted[t] == (t >= 35 && t < 45 ? 1 : 0));
  const auto early = make_labels(positive_at(12), 100);
  for (std::size_t t = 0; t < 100; ++t) CHECK(early[t] == (t < 12 ? 1 : 0));
  const auto late = make_labels(positive_at(500), 100);
  for (std::size_t t = 0; t < 100; ++t) CHECK(late[t] == (t >= 70 ? 1 : 0));
  Utterance neg;
  neg.audio.samples.assign(100, 0.0f);
  for (auto v : make_labels(neg, 40)) CHECK(v == 0);
  auto broken = positive_at(5);
  broken.keyword_end_frame.reset();
  CHECK_THROWS_AS(make_labels(broken, 10), DataError);
}

TEST_CASE("keyword excision") {
  Utterance u;
  for (int i = 0; i < 10; ++i) u.audio.samples.push_back(static_cast<float>(i));
  u.is_positive = true;
  u.keyword_end_frame = 0;
  u.keyword = SampleSpan{3, 7};
  const auto cut = excise_keyword(u);
  CHECK_FALSE(cut.is_positive);
  CHECK_FALSE(cut.keyword_end_frame);
  CHECK(cut.audio.samples == std::vector<float>{0, 1, 2, 7, 8, 9});
  Rng rng(1);
  std::size_t dropped = 0;
  for (int i = 0; i < 1000; ++i) dropped += drop_keyword(u, rng, 0.5).is_positive ? 0 : 1;
  CHECK(dropped > 430);
  CHECK(dropped < 570);
  u.keyword.reset();
  CHECK_THROWS_AS(excise_keyword(u), DataError);
}

TEST_CASE("synthetic dataset") {
  const auto a = synth_dataset(3, 6, 5);
  const auto b = synth_dataset(3, 6, 5);
  CHECK(a == b);
  CHECK_FALSE(a == synth_dataset(4, 6, 5));
  REQUIRE(a.size() == 11);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& u = a[i];
    CHECK(u.is_positive == (i < 6));
    CHECK(u.keyword_end_frame.has_value() == u.is_positive);
    for (float s : u.audio.samples) CHECK(std::isfinite(s));
    if (!u.is_positive) continue;
    REQUIRE(u.keyword);
    CHECK(u.keyword->end - u.keyword->begin == 3 * 3200);
    CHECK(*u.keyword_end_frame == keyword_end_frame_for(u.keyword->end));
    CHECK(u.keyword->begin >= 3200);
    CHECK(u.keyword->begin <= 16000);
    const std::size_t tail = u.audio.samples.size() - u.keyword->end;
    CHECK(tail >= 8000);
    CHECK(tail <= 32000);
  }
  NegativeStream s1(9), s2(9);
  for (int i = 0; i < 3; ++i) CHECK(s1.next().samples == s2.next().samples);
}

TEST_CASE("phrase energy sits at the tone frequencies") {
  // Positives carry tone energy inside the phrase span that exceeds the lead-in.
  SynthOptions o;
  o.snr_min_db = o.snr_max_db = 20.0;
  o.gains_db = {0.0};
  for (const auto& u : synth_dataset(5, 4, 0, o)) {
    const auto& s = u.audio.samples;
    double inside = 0.0, lead = 0.0;
    for (std::size_t i = u.keyword->begin; i < u.keyword->end; ++i) inside += s[i] * s[i];
    for (std::size_t i = 0; i < u.keyword->begin; ++i) lead += s[i] * s[i];
    inside /= static_cast<double>(u.keyword->end - u.keyword->begin);
    lead /= static_cast<double>(u.keyword->begin);
    CHECK(inside > 10.0 * lead);
  }
}

TEST_CASE("cross entropy value and gradient") {
  Rng rng(2);
  const auto logits = test::random_matrix<double>(rng, 2, 7);
  const std::vector<std::uint8_t> y{0, 1, 1, 0, 1, 0, 0};
  auto loss_of = [&](const Matrix64& z) {
    double total = 0.0;
    for (std::size_t t = 0; t < z.cols(); ++t) {
      const double lse = std::log(std::exp(z(0, t)) + std::exp(z(1, t)));
      total += lse - z(y[t], t);
    }
    return total / static_cast<double>(z.cols());
  };
  const auto r = cross_entropy(softmax_columns(logits), y);
  CHECK(r.loss == doctest::Approx(loss_of(logits)).epsilon(1e-12));
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t t = 0; t < 7; ++t) {
      auto up = logits, down = logits;
      up(c, t) += 1e-6;
      down(c, t) -= 1e-6;
      const double fd = (loss_of(up) - loss_of(down)) / 2e-6;
      CHECK(std::abs(r.grad_logits(c, t) - fd) < 1e-8);
    }
  }
  CHECK_THROWS_AS(cross_entropy(softmax_columns(logits), std::vector<std::uint8_t>{0}), ShapeError);
}

TEST_CASE("adam steps by hand") {
  std::vector<double> p{1.0, -2.0, 0.5};
  std::vector<double> g{0.3, -0.1, 0.0};
  BasicAdamState<double> st(AdamOptions{0.01, 0.9, 0.999, 1e-8});
  std::vector<std::span<double>> ps{p}, gs{g};
  adam_step<double>(ps, gs, st);
  // First step: m_hat = g and v_hat = g^2, so each weight moves by lr * sign(g).
  CHECK(p[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01 * 0.1 / (0.1 + 1e-8)).epsilon(1e-12));
  CHECK(p[2] == 0.5);
  g = {0.1, 0.1, 0.2};
  adam_step<double>(ps, gs, st);
  const double m = 0.9 * 0.03 + 0.1 * 0.1, v = 0.999 * 0.001 * 0.09 + 0.001 * 0.01;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(p[0] == doctest::Approx(1.0 - 0.01 * (0.3 / (0.3 + 1e-8)) - 0.01 * mh / (std::sqrt(vh) + 1e-8)));
  CHECK(st.step == 2);
  st.clear_moments();
  CHECK(st.step == 0);
  CHECK(st.first.empty());
}

TEST_CASE("schedule trace") {
  ScheduleState s;
  s.lr = 0.001;
  std::vector<std::vector<A>> got;
  std::vector<double> lrs;
  // Three improvements, eight flat epochs, then in main: one improvement,
  // four flat (decay), four more flat (stop).
  const double trace[] = {1.0, 0.9, 0.8, 0.85, 0.85, 0.9, 0.8, 0.81, 0.82, 0.83, 0.84,
                          0.7, 0.75, 0.75, 0.75, 0.75, 0.75, 0.75, 0.75, 0.75};
  for (double cv : trace) {
    got.push_back(schedule_epoch(s, cv));
    lrs.push_back(s.lr);
  }
  const std::vector<std::vector<A>> want = {
      {A::continue_training}, {A::continue_training}, {A::continue_training},
      {A::continue_training}, {A::continue_training}, {A::continue_training},
      {A::continue_training}, {A::continue_training}, {A::continue_training},
      {A::continue_training}, {A::rollback_to_best, A::switch_to_main},
      {A::continue_training}, {A::continue_training}, {A::continue_training},
      {A::continue_training}, {A::decay_lr},          {A::continue_training},
      {A::continue_training}, {A::continue_training}, {A::stop}};
  CHECK(got == want);
  CHECK(lrs[0] == doctest::Approx(0.0014));
  CHECK(lrs[2] == doctest::Approx(0.001 * 1.4 * 1.4 * 1.4));
  CHECK(lrs[10] == lrs[2]);
  CHECK(lrs[11] == lrs[2]);  // no growth in the main stage
  CHECK(lrs[15] == doctest::Approx(lrs[2] * 0.5));
  CHECK(s.best_cv_loss == 0.7);
  CHECK(format_actions(got[10]) == "rollback_to_best+switch_to_main");
}

TEST_CASE("schedule lr is monotone within each stage") {
  Rng rng(3);
  for (int run = 0; run < 20; ++run) {
    ScheduleState s;
    double prev = s.lr;
    for (int e = 0; e < 200; ++e) {
      const Stage before = s.stage;
      const auto acts = schedule_epoch(s, rng.uniform(0.0, 1.0));
      if (before == Stage::warmup) CHECK(s.lr >= prev);
      else CHECK(s.lr <= prev);
      prev = s.lr;
      if (acts.back() == A::stop) break;
    }
  }
}

TEST_CASE("cv split") {
  std::size_t in = 0;
  for (std::size_t i = 0; i < 10000; ++i) in += in_cv_split(i, 0.1);
  CHECK(in > 900);
  CHECK(in < 1100);
  CHECK(in_cv_split(17, 0.1) == in_cv_split(17, 0.1));
  for (std::size_t i = 0; i < 100; ++i) CHECK_FALSE(in_cv_split(i, 0.0));
}

TEST_CASE("manifest round trip") {
  const auto dir = test::scratch_dir("manifest");
  const auto data = synth_dataset(11, 3, 2);
  const auto path = write_dataset(dir, data);
  const auto back = read_manifest(path);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].is_positive == data[i].is_positive);
    CHECK(back[i].keyword_end_frame == data[i].keyword_end_frame);
    CHECK(back[i].keyword == data[i].keyword);
    REQUIRE(back[i].audio.samples.size() == data[i].audio.samples.size());
    CHECK(test::max_abs_diff(back[i].audio.samples, data[i].audio.samples) <= 1.0 / 32767.0);
  }
  write_text_file(dir / "synth.tsv", "# generated\nsynth seed=11 pos=3 neg=2\n");
  CHECK(read_manifest(dir / "synth.tsv") == data);
  write_text_file(dir / "bad.tsv", "utt.wav 2 -\n");
  CHECK_THROWS_AS(read_manifest(dir / "bad.tsv"), DataError);
}

TEST_CASE("tiny training run learns and is reproducible") {
  const auto data = synth_dataset(21, 40, 40);
  TrainOptions o;
  o.seed = 5;
  o.max_epochs = 4;
  o.batch_size = 8;
  std::ostringstream log1, log2;
  const auto r1 = train(tiny_config(), data, o, &log1);
  const auto r2 = train(tiny_config(), data, o, &log2);
  CHECK(log1.str() == log2.str());
  CHECK(r1.model == r2.model);
  REQUIRE(r1.epochs.size() == 4);
  CHECK(r1.best_cv.loss < r1.initial_cv_loss);
  CHECK(log1.str().rfind("#", 0) == 0);
  CHECK(log1.str().find("epoch=1 stage=warmup lr=") != std::string::npos);
  for (const auto& e : r1.epochs) CHECK(std::isfinite(e.train_loss));
  o.seed = 6;
  const auto r3 = train(tiny_config(), data, o);
  CHECK_FALSE(r3.model == r1.model);
}

TEST_CASE("gradient oracle on the tiny full stack") {
  Rng rng(4);
  ModelConfig c;
  c.feature_dim = 4;
  c.context = 1;
  c.depth = 2;
  c.filters = 3;
  c.memory = 3;
  c.lookahead = 1;
  const Model m = random_model(c, rng);
  std::vector<Matrix> xs{test::random_matrix<float>(rng, 12, 12), test::random_matrix<float>(rng, 12, 12)};
  std::vector<std::vector<std::uint8_t>> ys(2, std::vector<std::uint8_t>(12));
  for (auto& y : ys) for (auto& v : y) v = rng.bernoulli(0.5);
  GradCheckOptions o;
  o.kink_guard = true;
  const auto r = grad_check(m, xs, ys, o);
  CHECK(r.parameters == count_params(c).total());
  CHECK(r.min_relu_margin >= 1e-3);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("gradient oracle flags a wrong gradient") {
  std::vector<double> p{0.3, -0.7};
  const std::vector<double> wrong{2 * 0.3, 3 * 0.7 * 0.7 * 1.1};
  std::vector<std::span<double>> ps{p};
  std::vector<std::span<const double>> gs{wrong};
  const auto r = check_gradients(ps, gs, [&] { return p[0] * p[0] + p[1] * p[1] * p[1]; });
  CHECK(r.worst_index == 1);
  CHECK(r.max_rel_error == doctest::Approx(0.1 / 1.1).epsilon(1e-4));
  CHECK(p[0] == 0.3);
}
