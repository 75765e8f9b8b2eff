#include "kws/bytes.hpp"
#include "kws/frontend.hpp"
#include "kws/network.hpp"

namespace kws {

namespace {

void write_config(ByteWriter& out, const ModelConfig& c) {
  for (std::size_t v : {c.feature_dim, c.context, c.depth, c.filters, c.memory, c.lookahead,
                        c.classes, c.frame_hop_ms}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  out.u8(static_cast<std::uint8_t>(c.arch));
  out.u8(static_cast<std::uint8_t>(c.first));
  out.u8(static_cast<std::uint8_t>(c.second));
}

Activation read_activation(ByteReader& in) {
  const std::size_t at = in.offset();
  const std::uint8_t v = in.u8("activation kind");
  if (v > static_cast<std::uint8_t>(Activation::sigmoid)) {
    throw FormatError("unknown activation kind " + std::to_string(v), at);
  }
  return static_cast<Activation>(v);
}

ModelConfig read_config(ByteReader& in) {
  const std::size_t at = in.offset();
  ModelConfig c;
  for (std::size_t* v : {&c.feature_dim, &c.context, &c.depth, &c.filters, &c.memory,
                         &c.lookahead, &c.classes, &c.frame_hop_ms}) {
    *v = in.u32("config field");
  }
  const std::size_t arch_at = in.offset();
  const std::uint8_t arch = in.u8("architecture");
  if (arch > static_cast<std::uint8_t>(Arch::s1dcnn)) {
    throw FormatError("unknown architecture " + std::to_string(arch), arch_at);
  }
  c.arch = static_cast<Arch>(arch);
  c.first = read_activation(in);
  c.second = read_activation(in);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid model config: ") + e.what(), at);
  }
  // Guard against absurd sizes before allocating.
  const std::uint64_t n = c.filters;
  const std::uint64_t bias = c.arch == Arch::s1dcnn ? 2 * n : 0;
  std::uint64_t floats = 0;
  for (std::size_t d = 0; d < c.depth; ++d) {
    const std::uint64_t in_dim = d == 0 ? c.input_dim() : n;
    floats += n * (in_dim + c.memory + 4) + bias + 2;
  }
  floats += std::uint64_t(c.classes) * (n + 1);
  if (floats * 4 > in.remaining()) throw FormatError("model payload truncated", in.offset());
  return c;
}

}  // namespace

std::vector<std::uint8_t> serialize(const Model& model) {
  model.validate();
  const bool biases = model.config.arch == Arch::s1dcnn;
  ByteWriter out;
  out.bytes("S1DC");
  out.u8(kModelFileVersion);
  write_config(out, model.config);
  for (const auto& b : model.blocks) {
    out.f32s(b.unit.feature_weights.values());
    if (biases) out.f32s(b.unit.feature_bias);
    out.f32s(b.unit.time_weights.values());
    if (biases) out.f32s(b.unit.time_bias);
    out.f32s(b.norm.gamma);
    out.f32s(b.norm.shift);
    out.f32s(b.norm.running_mean);
    out.f32s(b.norm.running_var);
    out.f32(b.norm.eps);
    out.f32(b.norm.momentum);
  }
  out.f32s(model.head.weights.values());
  out.f32s(model.head.bias);
  return out.take();
}

Model deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect("S1DC", "model magic");
  const std::size_t version_at = in.offset();
  const std::uint8_t version = in.u8("version");
  if (version != kModelFileVersion) {
    throw FormatError("unsupported model file version " + std::to_string(version), version_at);
  }
  Model model;
  model.config = read_config(in);
  const auto& c = model.config;
  const bool biases = c.arch == Arch::s1dcnn;
  std::size_t in_dim = c.input_dim();
  for (std::size_t d = 0; d < c.depth; ++d) {
    Block b;
    b.unit = make_unit<float>(c.filters, in_dim, c.memory, c.lookahead, c.first, c.second);
    b.norm = make_batchnorm<float>(c.filters);
    in.f32s(b.unit.feature_weights.values(), "feature weights");
    if (biases) in.f32s(std::span<float>(b.unit.feature_bias), "feature bias");
    in.f32s(b.unit.time_weights.values(), "time weights");
    if (biases) in.f32s(std::span<float>(b.unit.time_bias), "time bias");
    in.f32s(std::span<float>(b.norm.gamma), "batch norm gamma");
    in.f32s(std::span<float>(b.norm.shift), "batch norm beta");
    in.f32s(std::span<float>(b.norm.running_mean), "batch norm running mean");
    in.f32s(std::span<float>(b.norm.running_var), "batch norm running variance");
    b.norm.eps = in.f32("batch norm eps");
    b.norm.momentum = in.f32("batch norm momentum");
    model.blocks.push_back(std::move(b));
    in_dim = c.filters;
  }
  model.head = make_linear<float>(c.classes, c.filters);
  in.f32s(model.head.weights.values(), "head weights");
  in.f32s(std::span<float>(model.head.bias), "head bias");
  if (!in.at_end()) throw FormatError("trailing bytes after model payload", in.offset());
  try {
    model.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("inconsistent model: ") + e.what(), bytes.size());
  }
  return model;
}

void save(const Model& model, const std::filesystem::path& path) {
  write_file_bytes(path, serialize(model));
}

Model load(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

}  // namespace kws
