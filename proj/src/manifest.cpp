#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kws/training.hpp"

namespace kws {
namespace {

std::size_t parse_count(const std::string& text, const std::string& what, std::size_t line) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("manifest line " + std::to_string(line) + ": bad " + what + " '" + text + "'");
  }
  return value;
}

std::optional<std::size_t> parse_optional(const std::string& text, const std::string& what,
                                          std::size_t line) {
  if (text == "-") return std::nullopt;
  return parse_count(text, what, line);
}

std::vector<Utterance> expand_synth(std::istringstream& fields, std::size_t line) {
  std::uint64_t seed = 0;
  std::size_t pos = 0, neg = 0;
  bool have_seed = false, have_pos = false, have_neg = false;
  std::string kv;
  while (fields >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw DataError("manifest line " + std::to_string(line) + ": expected key=value, got '" + kv + "'");
    const auto key = kv.substr(0, eq);
    const auto value = kv.substr(eq + 1);
    if (key == "seed") seed = parse_count(value, "seed", line), have_seed = true;
    else if (key == "pos") pos = parse_count(value, "pos", line), have_pos = true;
    else if (key == "neg") neg = parse_count(value, "neg", line), have_neg = true;
    else throw DataError("manifest line " + std::to_string(line) + ": unknown synth key '" + key + "'");
  }
  if (!have_seed || !have_pos || !have_neg) {
    throw DataError("manifest line " + std::to_string(line) + ": synth needs seed=, pos= and neg=");
  }
  return synth_dataset(seed, pos, neg);
}

}  // namespace

std::vector<Utterance> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<Utterance> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (const auto hash = text.find('#'); hash != std::string::npos) text.erase(hash);
    std::istringstream fields(text);
    std::string source;
    if (!(fields >> source)) continue;
    if (source == "synth") {
      auto utts = expand_synth(fields, line);
      out.insert(out.end(), std::make_move_iterator(utts.begin()), std::make_move_iterator(utts.end()));
      continue;
    }
    std::string label, end_frame, kw_begin, kw_end, extra;
    if (!(fields >> label >> end_frame)) {
      throw DataError("manifest line " + std::to_string(line) + ": expected <wav> <label> <keyword_end_frame>");
    }
    Utterance u;
    if (label != "0" && label != "1") {
      throw DataError("manifest line " + std::to_string(line) + ": label must be 0 or 1");
    }
    u.is_positive = label == "1";
    u.keyword_end_frame = parse_optional(end_frame, "keyword end frame", line);
    if (u.is_positive != u.keyword_end_frame.has_value()) {
      throw DataError("manifest line " + std::to_string(line) +
                      ": positives need a keyword end frame, negatives must use '-'");
    }
    if (fields >> kw_begin) {
      if (!(fields >> kw_end)) throw DataError("manifest line " + std::to_string(line) + ": keyword span needs two sample indices");
      const auto b = parse_optional(kw_begin, "keyword begin sample", line);
      const auto e = parse_optional(kw_end, "keyword end sample", line);
      if (b && e) u.keyword = SampleSpan{*b, *e};
    }
    if (fields >> extra) throw DataError("manifest line " + std::to_string(line) + ": unexpected field '" + extra + "'");
    const std::filesystem::path wav = source;
    u.audio = read_wav(wav.is_absolute() ? wav : base / wav);
    if (u.keyword && u.keyword->end > u.audio.samples.size()) {
      throw DataError("manifest line " + std::to_string(line) + ": keyword span outside the audio");
    }
    out.push_back(std::move(u));
  }
  return out;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, std::span<const Utterance> dataset) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  manifest << "# wav label keyword_end_frame keyword_begin_sample keyword_end_sample\n";
  char name[32];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& u = dataset[i];
    std::snprintf(name, sizeof name, "utt_%05zu.wav", i);
    write_wav(dir / name, u.audio);
    manifest << name << '\t' << (u.is_positive ? 1 : 0) << '\t';
    if (u.keyword_end_frame) manifest << *u.keyword_end_frame; else manifest << '-';
    if (u.keyword) manifest << '\t' << u.keyword->begin << '\t' << u.keyword->end;
    manifest << '\n';
  }
  const auto path = dir / "manifest.tsv";
  const auto text = manifest.str();
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return path;
}

}  // namespace kws
