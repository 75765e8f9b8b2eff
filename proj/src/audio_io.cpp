#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "kws/bytes.hpp"
#include "kws/frontend.hpp"

namespace kws {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

AudioBuffer decode_wav(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect("RIFF", "RIFF magic");
  in.u32("RIFF size");
  in.expect("WAVE", "WAVE tag");

  bool have_format = false;
  AudioBuffer audio;
  while (!in.at_end()) {
    const std::size_t chunk_at = in.offset();
    const auto id = in.tag(4, "chunk id");
    const std::uint32_t size = in.u32("chunk size");
    if (id == "fmt ") {
      if (size < 16) throw FormatError("fmt chunk too small", chunk_at);
      const std::uint16_t format = in.u16("audio format");
      const std::uint16_t channels = in.u16("channel count");
      const std::uint32_t rate = in.u32("sample rate");
      in.u32("byte rate");
      in.u16("block align");
      const std::uint16_t bits = in.u16("bits per sample");
      in.skip(size - 16, "fmt extension");
      if (format != 1) throw FormatError("only PCM (format 1) WAV is supported", chunk_at + 8);
      if (channels != 1) throw FormatError("only mono WAV is supported", chunk_at + 10);
      if (rate != kSampleRate) {
        throw FormatError("sample rate " + std::to_string(rate) +
                              " Hz not supported (expected 16000)",
                          chunk_at + 12);
      }
      if (bits != 16) throw FormatError("only 16-bit WAV is supported", chunk_at + 22);
      audio.sample_rate = rate;
      have_format = true;
    } else if (id == "data") {
      if (!have_format) throw FormatError("data chunk before fmt chunk", chunk_at);
      if (size > in.remaining()) throw FormatError("data chunk truncated", chunk_at);
      audio.samples.resize(size / 2);
      for (auto& s : audio.samples) s = static_cast<float>(in.i16("sample")) / 32768.0f;
      if (size % 2) in.skip(1, "odd data byte");
      return audio;
    } else {
      in.skip(size, "chunk body");
    }
    if (size % 2 && !in.at_end()) in.skip(1, "chunk pad");
  }
  throw FormatError("no data chunk", bytes.size());
}

AudioBuffer read_wav(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

std::vector<std::uint8_t> encode_wav(const AudioBuffer& audio) {
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  ByteWriter out;
  out.bytes("RIFF");
  out.u32(36 + data_bytes);
  out.bytes("WAVE");
  out.bytes("fmt ");
  out.u32(16);
  out.u16(1);
  out.u16(1);
  out.u32(audio.sample_rate);
  out.u32(audio.sample_rate * 2);
  out.u16(2);
  out.u16(16);
  out.bytes("data");
  out.u32(data_bytes);
  for (float s : audio.samples) {
    const float scaled = std::round(std::clamp(s, -1.0f, 1.0f) * 32768.0f);
    out.i16(static_cast<std::int16_t>(std::clamp(scaled, -32768.0f, 32767.0f)));
  }
  return out.take();
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
  write_file_bytes(path, encode_wav(audio));
}

std::vector<float> decode_pcm16(std::span<const std::uint8_t> bytes) {
  std::vector<float> out(bytes.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto v = static_cast<std::int16_t>(
        static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8)));
    out[i] = static_cast<float>(v) / 32768.0f;
  }
  return out;
}

std::vector<std::uint8_t> encode_features(const FeatureSequence& feats) {
  ByteWriter out;
  out.bytes("FTRS");
  out.u8(kFeatureDumpVersion);
  out.u32(static_cast<std::uint32_t>(feats.rows()));
  out.u32(static_cast<std::uint32_t>(feats.cols()));
  for (std::size_t t = 0; t < feats.cols(); ++t) {
    for (std::size_t f = 0; f < feats.rows(); ++f) out.f32(feats(f, t));
  }
  return out.take();
}

FeatureSequence decode_features(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect("FTRS", "feature dump magic");
  const std::size_t version_at = in.offset();
  if (in.u8("version") != kFeatureDumpVersion) {
    throw FormatError("unsupported feature dump version", version_at);
  }
  const std::uint32_t dim = in.u32("feature dim");
  const std::uint32_t frames = in.u32("frame count");
  if (std::uint64_t(dim) * frames * 4 > in.remaining()) {
    throw FormatError("feature payload truncated", in.offset());
  }
  FeatureSequence feats(dim, frames);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t f = 0; f < dim; ++f) feats(f, t) = in.f32("feature value");
  }
  if (!in.at_end()) throw FormatError("trailing bytes after feature payload", in.offset());
  return feats;
}

void write_features(const std::filesystem::path& path, const FeatureSequence& feats) {
  write_file_bytes(path, encode_features(feats));
}

FeatureSequence read_features(const std::filesystem::path& path) {
  return decode_features(read_file_bytes(path));
}

}  // namespace kws
