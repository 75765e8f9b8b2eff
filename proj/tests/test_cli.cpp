#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "kws/cli.hpp"
#include "kws/evaluation.hpp"
#include "kws/network.hpp"
#include "support.hpp"

using namespace kws;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args, const std::string& input = {}) {
  std::ostringstream out, err;
  std::istringstream in(input);
  Result r;
  r.code = cli::run(args, out, err, in);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool has(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

const std::vector<std::string> kTiny = {"--depth", "2", "--filters", "4", "--memory", "3",
                                        "--context", "1", "--lookahead", "1"};

}  // namespace

TEST_CASE("info reports the reference accounting") {
  auto r = run({"info", "--config", "paper", "--lookahead", "1"});
  CHECK(r.code == 0);
  CHECK(has(r.out, "receptive_field_ms=540/120"));
  CHECK(has(r.out, "params=13698"));
  CHECK(has(r.out, "macs=13024"));
  r = run({"info", "--config", "paper", "--arch", "svdf", "--json"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["params"]["total"] == 13250);
  CHECK(j["receptive_field_ms"]["past"] == 610);
  CHECK(j["receptive_field_ms"]["future"] == 50);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == cli::kExitValidation);
  CHECK(run({"info", "--bogus"}).code == cli::kExitValidation);
  CHECK(run({"info", "--arch", "lstm"}).code == cli::kExitValidation);
  CHECK(run({"info", "--config", "paper", "--lookahead", "9"}).code == cli::kExitValidation);
  CHECK(run({"info", "--config", "paper", "--arch", "svdf", "--lookahead", "1"}).code == cli::kExitValidation);
  const auto missing = run({"detect", "--model", "/nonexistent/m.bin", "--wav", "x.wav"});
  CHECK(missing.code == cli::kExitRuntime);
  CHECK(has(missing.err, "/nonexistent/m.bin"));
  CHECK(missing.out.empty());
  CHECK(run({"grad-check", "--tolerance", "1e-30"}).code == cli::kExitRuntime);
}

TEST_CASE("verification subcommands") {
  auto r = run({"verify-equivalence", "--seeds", "5"});
  CHECK(r.code == 0);
  CHECK(has(r.out, "result=pass"));
  r = run({"verify-equivalence", "--seeds", "5", "--bias-control"});
  CHECK(has(r.out, "max_deviation="));
  r = run({"grad-check", "--kink-guard"});
  CHECK(r.code == 0);
  CHECK(has(r.out, "result=pass"));
}

TEST_CASE("end to end pipeline") {
  const auto dir = test::scratch_dir("cli");
  const auto d = (dir / "data").string();
  auto r = run({"synth-data", "--seed", "3", "--pos", "20", "--neg", "20", "--out", d});
  REQUIRE(r.code == 0);
  CHECK(has(r.out, "utterances=40"));

  r = run({"features", "--wav", d + "/utt_00000.wav", "--out", (dir / "f.bin").string(), "--context", "2"});
  REQUIRE(r.code == 0);
  CHECK(has(r.out, "dim=65"));

  std::vector<std::string> train{"train", "--manifest", d + "/manifest.tsv", "--epochs", "2",
                                 "--out", (dir / "m.bin").string(), "--log", (dir / "log.txt").string()};
  train.insert(train.end(), kTiny.begin(), kTiny.end());
  r = run(train);
  REQUIRE(r.code == 0);
  const auto log = slurp(dir / "log.txt");
  CHECK(has(log, "epoch=1 stage=warmup"));
  CHECK(has(log, "epoch=2 stage=warmup"));
  const Model m = kws::load(dir / "m.bin");
  CHECK(m.config.depth == 2);
  CHECK(m.config.lookahead == 1);

  r = run({"detect", "--model", (dir / "m.bin").string(), "--wav", d + "/utt_00000.wav", "--threshold", "0"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("frame=0 time_ms=0 score=", 0) == 0);
  CHECK(has(r.out, "\nframe=100 time_ms=1000 score="));

  // Same audio as raw PCM on stdin.
  const auto wav = slurp(d + "/utt_00000.wav");
  const auto raw = wav.substr(44);
  const auto piped = run({"detect", "--model", (dir / "m.bin").string(), "--stdin", "--threshold", "0"}, raw);
  CHECK(piped.code == 0);
  CHECK(piped.out == r.out);

  r = run({"eval", "--model", (dir / "m.bin").string(), "--pos", "4", "--neg-hours", "0.002",
           "--det", (dir / "det.csv").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("frr_at_1fa=", 0) == 0);
  CHECK(has(r.out, " pos=4 neg_hours="));
  const auto det = read_det(dir / "det.csv");
  CHECK(det.size() >= 1001);

  r = run({"info", "--model", (dir / "m.bin").string(), "--json"});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["params"]["total"] == count_params(m.config).total());
}

TEST_CASE("training twice gives identical artifacts") {
  const auto dir = test::scratch_dir("cli_repeat");
  for (const char* tag : {"a", "b"}) {
    std::vector<std::string> args{"train", "--seed", "4", "--pos", "20", "--neg", "20", "--epochs", "2",
                                  "--out", (dir / (std::string(tag) + ".bin")).string(),
                                  "--log", (dir / (std::string(tag) + ".log")).string()};
    args.insert(args.end(), kTiny.begin(), kTiny.end());
    REQUIRE(run(args).code == 0);
  }
  CHECK(slurp(dir / "a.log") == slurp(dir / "b.log"));
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
}
