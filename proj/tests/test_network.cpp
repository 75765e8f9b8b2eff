#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "kws/bytes.hpp"
#include "kws/network.hpp"
#include "kws/training.hpp"
#include "kws/verify.hpp"
#include "support.hpp"

using namespace kws;

namespace {

std::size_t visited_parameters(Model m) {
  std::size_t n = 0;
  for_each_parameter(m, [&](std::span<float> s) { n += s.size(); });
  return n;
}

// Independent MAC tally: one per weight of every filter, one per batch-norm
// channel and one per head weight.
std::size_t recount_macs(const ModelConfig& c) {
  std::size_t total = 0, in = c.input_dim();
  for (std::size_t d = 0; d < c.depth; ++d) {
    total += c.filters * in + c.filters * c.memory + c.filters;
    in = c.filters;
  }
  return total + c.classes * c.filters;
}

}  // namespace

TEST_CASE("reference configuration") {
  const auto c = ModelConfig::paper();
  CHECK(c.feature_dim == 13);
  CHECK(c.context == 5);
  CHECK(c.depth == 7);
  CHECK(c.filters == 32);
  CHECK(c.memory == 9);
  CHECK(c.classes == 2);
  CHECK(c.input_dim() == 143);
  CHECK(c.first == Activation::identity);
  CHECK(c.second == Activation::relu);
}

TEST_CASE("receptive field and delay per lookahead") {
  const std::size_t past[] = {610, 540, 470, 400, 330};
  const std::size_t future[] = {50, 120, 190, 260, 330};
  for (std::size_t l = 0; l <= 4; ++l) {
    const auto rf = receptive_field(ModelConfig::paper(l));
    CHECK(rf.past_ms == past[l]);
    CHECK(rf.future_ms == future[l]);
    CHECK(output_delay(ModelConfig::paper(l)) == (7 * l + 5) * 10);
  }
}

TEST_CASE("receptive field matches perturbation experiments") {
  Rng rng(12);
  for (int trial = 0; trial < 6; ++trial) {
    ModelConfig c;
    c.feature_dim = 3;
    c.context = rng.below(3);
    c.depth = 1 + rng.below(3);
    c.filters = 4;
    c.memory = 2 + rng.below(4);
    c.lookahead = rng.below(c.memory);
    c.second = Activation::sigmoid;  // keeps every path live
    const Model m = random_model(c, rng);
    const auto rf = receptive_field(c);
    const std::size_t T = 60, t = 30;
    const auto raw = test::random_matrix<float>(rng, 3, T);
    const auto base = forward_logits(m, concat_context(raw, c.context, EdgeMode::zero));
    for (std::size_t s = 0; s < T; ++s) {
      auto moved = raw;
      moved(0, s) += 1.0f;
      const auto y = forward_logits(m, concat_context(moved, c.context, EdgeMode::zero));
      const bool changed = y(0, t) != base(0, t) || y(1, t) != base(1, t);
      const bool inside = s + rf.past_frames >= t && s <= t + rf.future_frames;
      CHECK_MESSAGE(changed == inside, "s=" << s << " C=" << c.context << " D=" << c.depth
                                            << " K=" << c.memory << " L=" << c.lookahead);
    }
  }
}

TEST_CASE("parameter accounting") {
  const auto s1 = count_params(ModelConfig::paper(0, Arch::s1dcnn));
  const auto sv = count_params(ModelConfig::paper(0, Arch::svdf));
  CHECK(s1.total() == 13698);
  CHECK(sv.total() == 13250);
  CHECK(s1.total() - sv.total() == 448);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    auto c = random_config(rng, Arch::s1dcnn);
    c.lookahead = 0;
    c.first = Activation::identity;
    auto v = c;
    v.arch = Arch::svdf;
    CHECK(count_params(c).total() - count_params(v).total() == 2 * c.filters * c.depth);
    CHECK(count_params(build(c, rng)).total() == count_params(c).total());
    CHECK(visited_parameters(build(c, rng)) == count_params(c).total());
    CHECK(visited_parameters(build(v, rng)) == count_params(v).total());
  }
}

TEST_CASE("mac accounting") {
  const auto m = count_macs(ModelConfig::paper());
  CHECK(m.total() == 13024);
  CHECK(std::abs(double(m.total()) - 13000.0) / 13000.0 < 0.05);
  CHECK(count_macs(ModelConfig::paper(3)).total() == 13024);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto c = random_config(rng, rng.bernoulli(0.5) ? Arch::svdf : Arch::s1dcnn);
    CHECK(count_macs(c).total() == recount_macs(c));
  }
}

TEST_CASE("config validation") {
  auto c = ModelConfig::paper();
  c.lookahead = 9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  auto s = ModelConfig::paper(0, Arch::svdf);
  s.lookahead = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = ModelConfig::paper(0, Arch::svdf);
  s.first = Activation::relu;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  c = ModelConfig::paper();
  c.classes = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_arch("svdf") == Arch::svdf);
  CHECK_THROWS_AS(parse_arch("lstm"), ConfigError);
}

TEST_CASE("build draws bounded weights deterministically") {
  Rng a(5), b(5);
  const auto cfg = ModelConfig::paper();
  const Model m = build(cfg, a);
  CHECK(m == build(cfg, b));
  const double bound0 = 1.0 / std::sqrt(143.0);
  for (float w : m.blocks[0].unit.feature_weights.values()) CHECK(std::abs(w) <= bound0);
  for (float w : m.blocks[3].unit.time_weights.values()) CHECK(std::abs(w) <= 1.0 / 3.0);
  for (const auto& blk : m.blocks) {
    for (float v : blk.unit.feature_bias) CHECK(v == 0.0f);
    for (float v : blk.norm.gamma) CHECK(v == 1.0f);
  }
}

TEST_CASE("forward produces per-frame distributions") {
  Rng rng(6);
  const Model m = random_model(ModelConfig::paper(1), rng);
  const auto x = test::random_matrix<float>(rng, 143, 40);
  const auto p = forward(m, x);
  REQUIRE(p.rows() == 2);
  REQUIRE(p.cols() == 40);
  for (std::size_t t = 0; t < 40; ++t) CHECK(p(0, t) + p(1, t) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(forward(m, test::random_matrix<float>(rng, 13, 5)), ShapeError);
}

TEST_CASE("svdf models run through the low-rank layer and equal their reduction") {
  Rng rng(7);
  for (int i = 0; i < 10; ++i) {
    const auto c = random_config(rng, Arch::svdf);
    const Model m = random_model(c, rng);
    const Model r = reduce_svdf_model(m);
    CHECK(r.config.arch == Arch::s1dcnn);
    const auto x = test::random_matrix<float>(rng, c.input_dim(), 30);
    CHECK(test::max_abs_diff(forward(m, x).values(), forward(r, x).values()) < 1e-5);
  }
  CHECK_THROWS_AS(reduce_svdf_model(build(ModelConfig::paper(), rng)), ConfigError);
}

TEST_CASE("float and double models agree") {
  Rng rng(8);
  const Model m = random_model(ModelConfig::paper(2), rng);
  CHECK(model_cast<float>(model_cast<double>(m)) == m);
  const auto x = test::random_matrix<float>(rng, 143, 25);
  const auto p32 = forward(m, x);
  const auto p64 = forward(model_cast<double>(m), matrix_cast<double>(x));
  CHECK(test::max_abs_diff(p32.values(), p64.values()) < 1e-5);
}

TEST_CASE("serialization round trip is bit identical") {
  Rng rng(9);
  for (auto arch : {Arch::s1dcnn, Arch::svdf}) {
    const Model m = random_model(ModelConfig::paper(arch == Arch::svdf ? 0 : 2, arch), rng);
    const auto bytes = serialize(m);
    const Model back = deserialize(bytes);
    CHECK(back == m);
    CHECK(serialize(back) == bytes);
    const auto x = test::random_matrix<float>(rng, 143, 50);
    CHECK(forward(back, x) == forward(m, x));
  }
  const Model s1 = build(ModelConfig::paper(), rng);
  const Model sv = build(ModelConfig::paper(0, Arch::svdf), rng);
  CHECK(serialize(s1).size() - serialize(sv).size() == 4 * 2 * 32 * 7);
}

TEST_CASE("model file header layout") {
  Rng rng(10);
  const auto bytes = serialize(build(ModelConfig::paper(1), rng));
  ByteReader r(bytes);
  CHECK(r.tag(4, "magic") == "S1DC");
  CHECK(r.u8("version") == kModelFileVersion);
  const std::uint32_t expect[] = {13, 5, 7, 32, 9, 1, 2, 10};
  for (auto v : expect) CHECK(r.u32("field") == v);
  CHECK(r.u8("arch") == 1);
  CHECK(r.u8("first") == 0);
  CHECK(r.u8("second") == 1);
}

TEST_CASE("corrupt model files are rejected with offsets") {
  Rng rng(11);
  ModelConfig c;
  c.feature_dim = 2;
  c.context = 1;
  c.depth = 2;
  c.filters = 3;
  c.memory = 3;
  const auto good = serialize(build(c, rng));
  for (std::size_t n = 0; n < good.size(); ++n) {
    CHECK_THROWS_AS(deserialize(std::span(good.data(), n)), FormatError);
  }
  auto trailing = good;
  trailing.push_back(1);
  try {
    deserialize(trailing);
    FAIL("trailing byte accepted");
  } catch (const FormatError& e) {
    CHECK(e.offset() == good.size());
  }
  auto magic = good;
  magic[1] = 'X';
  CHECK_THROWS_AS(deserialize(magic), FormatError);
  auto version = good;
  version[4] = 2;
  CHECK_THROWS_AS(deserialize(version), FormatError);
  auto lookahead = good;
  lookahead[5 + 5 * 4] = 7;  // L >= K
  CHECK_THROWS_AS(deserialize(lookahead), FormatError);
  auto arch = good;
  arch[5 + 32] = 9;
  try {
    deserialize(arch);
    FAIL("bad arch accepted");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 37);
  }
  auto act = good;
  act[5 + 34] = 7;
  CHECK_THROWS_AS(deserialize(act), FormatError);
}

TEST_CASE("save and load") {
  const auto dir = test::scratch_dir("network");
  Rng rng(12);
  const Model m = random_model(ModelConfig::paper(), rng);
  save(m, dir / "m.bin");
  CHECK(load(dir / "m.bin") == m);
  CHECK_THROWS_AS(load(dir / "absent.bin"), IoError);
  const auto bytes = serialize(m);
  write_file_bytes(dir / "cut.bin", std::span(bytes.data(), bytes.size() - 1));
  try {
    load(dir / "cut.bin");
    FAIL("truncated model accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("cut.bin") != std::string::npos);
  }
}

TEST_CASE("model gradients match the 64-bit oracle") {
  Rng rng(13);
  for (auto arch : {Arch::s1dcnn, Arch::svdf}) {
    ModelConfig c;
    c.arch = arch;
    c.feature_dim = 3;
    c.context = 1;
    c.depth = 2;
    c.filters = 3;
    c.memory = 3;
    c.lookahead = arch == Arch::s1dcnn ? 1 : 0;
    c.second = Activation::sigmoid;
    const Model m = random_model(c, rng);
    std::vector<Matrix> xs{test::random_matrix<float>(rng, 9, 7), test::random_matrix<float>(rng, 9, 5)};
    std::vector<std::vector<std::uint8_t>> ys{{0, 1, 1, 0, 0, 1, 0}, {1, 1, 0, 0, 1}};
    const auto r = grad_check(m, xs, ys);
    CHECK(r.parameters == count_params(c).total());
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("training step statistics") {
  Rng rng(14);
  ModelConfig c;
  c.feature_dim = 2;
  c.context = 0;
  c.depth = 1;
  c.filters = 2;
  c.memory = 2;
  Model m = random_model(c, rng);
  const Model before = m;
  std::vector<Matrix> xs{test::random_matrix<float>(rng, 2, 6)};
  std::vector<std::vector<std::uint8_t>> ys{{0, 0, 1, 1, 0, 0}};
  Model g = zeros_like(m);
  const float loss = forward_backward(m, std::span<const Matrix>(xs),
                                      std::span<const std::vector<std::uint8_t>>(ys), g, false);
  CHECK(m == before);
  CHECK(loss == doctest::Approx(minibatch_loss(m, std::span<const Matrix>(xs),
                                               std::span<const std::vector<std::uint8_t>>(ys))));
  forward_backward(m, std::span<const Matrix>(xs), std::span<const std::vector<std::uint8_t>>(ys), g, true);
  CHECK(m.blocks[0].norm.running_mean != before.blocks[0].norm.running_mean);
  std::vector<std::vector<std::uint8_t>> bad{{0, 0, 1}};
  CHECK_THROWS(forward_backward(m, std::span<const Matrix>(xs), std::span<const std::vector<std::uint8_t>>(bad), g, false));
}

TEST_CASE("info output") {
  const auto info = describe(ModelConfig::paper(1));
  const auto text = format_info(info);
  CHECK(text.find("receptive_field_ms=540/120\n") != std::string::npos);
  CHECK(text.find("params=13698\n") != std::string::npos);
  CHECK(text.find("macs=13024\n") != std::string::npos);
  CHECK(text.find("delay_ms=120\n") != std::string::npos);
  const auto j = nlohmann::json::parse(format_info_json(info));
  CHECK(j["params"]["total"] == 13698);
  CHECK(j["params"]["norm"] == 448);
  CHECK(j["macs"]["total"] == 13024);
  CHECK(j["receptive_field_ms"]["past"] == 540);
  CHECK(j["receptive_field_ms"]["future"] == 120);
  CHECK(j["delay_ms"] == 120);
  CHECK(j["config"]["arch"] == "s1dcnn");
  CHECK(j["config"]["lookahead"] == 1);
}
