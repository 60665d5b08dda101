#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "diffse/types.hpp"

namespace diffse {

inline constexpr int kMelBands = 80;
inline constexpr int kWindow = 1024;
inline constexpr int kHop = 256;
inline constexpr double kLogFloor = 1e-5;

/// frames x bands matrix, row-major (one row per frame).
struct MelSpectrogram {
  int frames = 0;
  int bands = kMelBands;
  std::vector<double> values;

  MelSpectrogram() = default;
  MelSpectrogram(int frames_, int bands_) : frames(frames_), bands(bands_), values(std::size_t(frames_) * bands_, 0.0) {}

  double& at(int frame, int band) { return values[std::size_t(frame) * bands + band]; }
  double at(int frame, int band) const { return values[std::size_t(frame) * bands + band]; }
  std::span<const double> row(int frame) const {
    return std::span<const double>(values).subspan(std::size_t(frame) * bands, bands);
  }
  /// Frames [first, first + count).
  MelSpectrogram crop(int first, int count) const;
};

// ---- WAV (RIFF, 16-bit PCM, mono, 16 kHz) ----

/// Throws std::runtime_error on I/O failure and std::invalid_argument when
/// the file is not 16-bit mono PCM at 16 kHz.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wave);

// ---- spectral analysis ----

/// Frame count produced by stft_mel for `length` samples (no padding).
int mel_frame_count(std::size_t length);

/// HTK-scale triangular filters over 0..8000 Hz for a 1024-point FFT. Row b
/// holds the weights of band b over the 513 bins; every row sums to 1.
const std::vector<std::vector<double>>& mel_filterbank();

/// Hann-windowed magnitude STFT (window 1024, hop 256, no padding) projected
/// onto the Mel filterbank, natural log with a 1e-5 floor. Throws
/// std::invalid_argument when x is shorter than one window.
MelSpectrogram stft_mel(std::span<const double> x);
/// Same without the log (the Mel-projected magnitudes).
MelSpectrogram stft_mel_linear(std::span<const double> x);

/// Serial reference for stft_mel; stft_mel distributes frames over OpenMP
/// threads and must agree bit-for-bit.
MelSpectrogram stft_mel_serial(std::span<const double> x);

/// Log-Mel of x zero-padded by (window - hop) / 2 on each side, so frame f
/// is centred on samples [f*hop, (f+1)*hop). Yields floor(len/hop) frames
/// for len >= hop, which covers the waveform within one hop.
MelSpectrogram conditioning_mel(std::span<const double> x);

/// Maps natural-log Mel to [0, 1]: clamp((20*log10(S) - 20 + 100) / 100).
MelSpectrogram normalize_mel(const MelSpectrogram& log_mel);

enum class UpsampleMode { repeat, linear };

/// Expands a frame-rate matrix to one row per sample (target_len rows).
/// Throws std::invalid_argument when (frames + 1) * hop < target_len.
MelSpectrogram upsample_condition(const MelSpectrogram& mel, std::size_t target_len,
                                  UpsampleMode mode = UpsampleMode::repeat);

/// Source frame(s) and weight used by upsample_condition for one sample:
/// value = (1 - weight) * frame[lo] + weight * frame[hi].
struct UpsampleTap {
  int lo = 0;
  int hi = 0;
  double weight = 0.0;
};
UpsampleTap upsample_tap(int frames, std::size_t sample, UpsampleMode mode);

/// Writes frames as CSV rows (frame index followed by the band values).
void write_mel_csv(std::ostream& out, const MelSpectrogram& mel);

}  // namespace diffse
