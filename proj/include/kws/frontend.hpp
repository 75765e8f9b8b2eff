#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kws/numerics.hpp"

namespace kws {

inline constexpr std::uint32_t kSampleRate = 16000;

struct AudioBuffer {
  std::vector<float> samples;  // nominally in [-1, 1]
  std::uint32_t sample_rate = kSampleRate;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
  bool operator==(const AudioBuffer&) const = default;
};

struct FrameSpec {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t num_coeffs = 13;

  std::size_t window_samples(std::uint32_t sample_rate = kSampleRate) const;
  std::size_t hop_samples(std::uint32_t sample_rate = kSampleRate) const;
  void validate() const;
};

/// F x T matrix, one column per frame.
using FeatureSequence = Matrix;

/// Scales every sample by 10^(p_db / 20). No clipping is applied, so samples
/// may leave [-1, 1].
AudioBuffer apply_gain(const AudioBuffer& audio, double p_db);

/// Number of complete windows in `num_samples`; 0 when shorter than a window.
std::size_t frame_count(std::size_t num_samples, const FrameSpec& spec = {},
                        std::uint32_t sample_rate = kSampleRate);

/// Slices the signal into Hamming-windowed frames. Returns a T x window matrix.
Matrix frame_signal(const AudioBuffer& audio, const FrameSpec& spec = {});

/// MFCC pipeline constants. Defaults: 512-point FFT, 20 mel filters spanning
/// 0-8000 Hz, log floor 1e-10, orthonormal DCT-II. No pre-emphasis, deltas or
/// mean normalization.
struct MfccOptions {
  std::size_t num_coeffs = 13;
  std::size_t num_filters = 20;
  double low_hz = 0.0;
  double high_hz = 8000.0;
  double log_floor = 1e-10;
  std::uint32_t sample_rate = kSampleRate;
};

/// Precomputed tables for one window length; shared by the batch and
/// streaming frontends so both produce bit-identical coefficients.
class MfccExtractor {
 public:
  explicit MfccExtractor(std::size_t window_samples, MfccOptions options = {});

  /// `frame` must already be windowed.
  std::vector<float> compute(std::span<const float> frame) const;

  std::size_t window_samples() const noexcept { return window_samples_; }
  std::size_t fft_size() const noexcept { return fft_size_; }
  const MfccOptions& options() const noexcept { return options_; }

 private:
  std::size_t window_samples_;
  std::size_t fft_size_;
  MfccOptions options_;
  std::vector<double> filterbank_;  // num_filters x (fft_size/2 + 1)
  std::vector<double> dct_;         // num_coeffs x num_filters
};

/// |DFT|^2 bins 0..fft_size/2 of a zero-padded frame (radix-2 FFT).
std::vector<double> power_spectrum(std::span<const float> frame,
                                   std::size_t fft_size);

/// Coefficients for each row of `windows` (as returned by frame_signal).
FeatureSequence mfcc(const Matrix& windows, const MfccOptions& options = {});

/// frame_signal followed by mfcc.
FeatureSequence extract_features(const AudioBuffer& audio,
                                 const FrameSpec& spec = {});

enum class EdgeMode {
  replicate,  // repeat first/last frame
  zero,       // zero frames; the streaming convention
};

/// Stacks 2c+1 neighbouring frames: column t becomes
/// [x_{t-c}; ...; x_t; ...; x_{t+c}], F' = F * (2c + 1).
FeatureSequence concat_context(const FeatureSequence& feats, std::size_t c,
                               EdgeMode edges = EdgeMode::replicate);

/// Incremental frontend: accepts audio in arbitrary chunks and emits one
/// coefficient vector per completed window, identical to the batch path.
class FeatureStream {
 public:
  explicit FeatureStream(const FrameSpec& spec = {},
                         std::uint32_t sample_rate = kSampleRate);

  std::vector<std::vector<float>> push(std::span<const float> samples);
  std::size_t frames_emitted() const noexcept { return frames_emitted_; }

 private:
  FrameSpec spec_;
  std::size_t window_;
  std::size_t hop_;
  MfccExtractor extractor_;
  std::vector<double> hamming_;
  std::vector<float> pending_;
  std::size_t frames_emitted_ = 0;
};

std::vector<double> hamming_window(std::size_t n);

// WAV (RIFF, PCM 16-bit little-endian, mono, 16 kHz only).
AudioBuffer decode_wav(std::span<const std::uint8_t> bytes);
AudioBuffer read_wav(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_wav(const AudioBuffer& audio);
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

/// Raw 16-bit little-endian PCM to normalized floats. A trailing odd byte is
/// ignored.
std::vector<float> decode_pcm16(std::span<const std::uint8_t> bytes);

// Feature dump: "FTRS", version u8, F u32le, T u32le, then F*T f32le values
// frame-major (all F values of frame 0, then frame 1, ...).
inline constexpr std::uint8_t kFeatureDumpVersion = 1;
std::vector<std::uint8_t> encode_features(const FeatureSequence& feats);
FeatureSequence decode_features(std::span<const std::uint8_t> bytes);
void write_features(const std::filesystem::path& path,
                    const FeatureSequence& feats);
FeatureSequence read_features(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

}  // namespace kws
