#include "diffse/dsp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include <fftw3.h>
#include <fmt/format.h>

namespace diffse {

namespace {

constexpr int kBins = kWindow / 2 + 1;
constexpr double kFmax = 8000.0;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

const std::vector<double>& hann_window() {
  static const std::vector<double> window = [] {
    std::vector<double> w(kWindow);
    for (int n = 0; n < kWindow; ++n) {
      w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / kWindow);
    }
    return w;
  }();
  return window;
}

// fftw plans are created once; executing a plan on new arrays is thread-safe.
class RealFft {
 public:
  RealFft() {
    std::vector<double> in(kWindow);
    std::vector<fftw_complex> out(kBins);
    plan_ = fftw_plan_dft_r2c_1d(kWindow, in.data(), out.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  ~RealFft() { fftw_destroy_plan(plan_); }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void magnitude(std::span<const double> frame, std::span<double> mags) const {
    std::array<double, kWindow> in;
    std::array<fftw_complex, kBins> out;
    const auto& w = hann_window();
    for (int n = 0; n < kWindow; ++n) in[n] = frame[n] * w[n];
    fftw_execute_dft_r2c(plan_, in.data(), out.data());
    for (int k = 0; k < kBins; ++k) mags[k] = std::hypot(out[k][0], out[k][1]);
  }

 private:
  fftw_plan plan_;
};

const RealFft& real_fft() {
  static const RealFft fft;
  return fft;
}

void analyze_frame(std::span<const double> x, int frame, MelSpectrogram& out) {
  std::array<double, kBins> mags;
  real_fft().magnitude(x.subspan(std::size_t(frame) * kHop, kWindow), mags);
  const auto& bank = mel_filterbank();
  for (int b = 0; b < kMelBands; ++b) {
    const auto& row = bank[b];
    double acc = 0.0;
    for (int k = 0; k < kBins; ++k) acc += row[k] * mags[k];
    out.at(frame, b) = acc;
  }
}

void require_analyzable(std::span<const double> x) {
  if (x.size() < std::size_t(kWindow)) {
    throw std::invalid_argument(fmt::format(
        "input of {} samples is shorter than the {}-sample analysis window", x.size(), kWindow));
  }
}

void apply_log(MelSpectrogram& mel) {
  for (double& v : mel.values) v = std::log(std::max(v, kLogFloor));
}

// ---- little-endian helpers ----

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  out.write(b, 4);
}
void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  out.write(b, 2);
}
std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t get_u16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

}  // namespace

MelSpectrogram MelSpectrogram::crop(int first, int count) const {
  if (first < 0 || count < 0 || first + count > frames) {
    throw std::out_of_range(fmt::format("crop [{}, {}) outside {} frames", first, first + count, frames));
  }
  MelSpectrogram out(count, bands);
  std::copy_n(values.begin() + std::ptrdiff_t(first) * bands, std::size_t(count) * bands, out.values.begin());
  return out;
}

// ---- WAV ----

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw std::invalid_argument(fmt::format("{}: not a RIFF/WAVE file", path.string()));
  }
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw std::invalid_argument(fmt::format("{}: truncated chunk", path.string()));
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw std::invalid_argument(fmt::format("{}: short fmt chunk", path.string()));
      format = get_u16(bytes.data() + body);
      channels = get_u16(bytes.data() + body + 2);
      rate = get_u32(bytes.data() + body + 4);
      bits = get_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw std::invalid_argument(fmt::format("{}: data chunk before fmt chunk", path.string()));
      if (format != 1 || bits != 16) {
        throw std::invalid_argument(fmt::format("{}: expected 16-bit PCM, got format {} with {} bits", path.string(), format, bits));
      }
      if (channels != 1) {
        throw std::invalid_argument(fmt::format("{}: expected mono, got {} channels", path.string(), channels));
      }
      if (rate != std::uint32_t(kSampleRate)) {
        throw std::invalid_argument(fmt::format("{}: expected sample rate {}, got {}", path.string(), kSampleRate, rate));
      }
      Waveform wave;
      wave.samples.resize(size / 2);
      for (std::size_t i = 0; i < wave.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(get_u16(bytes.data() + body + 2 * i));
        wave.samples[i] = double(v) / 32768.0;
      }
      return wave;
    }
    pos = body + size + (size & 1);
  }
  throw std::invalid_argument(fmt::format("{}: no data chunk", path.string()));
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  if (wave.sample_rate != kSampleRate) {
    throw std::invalid_argument(fmt::format("write_wav: expected sample rate {}, got {}", kSampleRate, wave.sample_rate));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  const auto data_bytes = std::uint32_t(wave.samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, kSampleRate);
  put_u32(out, kSampleRate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double s : wave.samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("write_wav: non-finite sample");
    const long q = std::lround(std::clamp(s, -1.0, 32767.0 / 32768.0) * 32768.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  if (!out) throw std::runtime_error(fmt::format("write failed for {}", path.string()));
}

// ---- Mel analysis ----

int mel_frame_count(std::size_t length) {
  if (length < std::size_t(kWindow)) return 0;
  return int((length - kWindow) / kHop) + 1;
}

const std::vector<std::vector<double>>& mel_filterbank() {
  static const std::vector<std::vector<double>> bank = [] {
    std::vector<std::vector<double>> rows(kMelBands, std::vector<double>(kBins, 0.0));
    const double mel_max = hz_to_mel(kFmax);
    std::array<double, kMelBands + 2> edges;
    for (int i = 0; i < kMelBands + 2; ++i) edges[i] = mel_to_hz(mel_max * i / (kMelBands + 1));
    for (int b = 0; b < kMelBands; ++b) {
      const double lo = edges[b], centre = edges[b + 1], hi = edges[b + 2];
      double sum = 0.0;
      for (int k = 0; k < kBins; ++k) {
        const double f = double(k) * kSampleRate / kWindow;
        const double w = std::max(0.0, std::min((f - lo) / (centre - lo), (hi - f) / (hi - centre)));
        rows[b][k] = w;
        sum += w;
      }
      for (double& w : rows[b]) w /= sum;
    }
    return rows;
  }();
  return bank;
}

MelSpectrogram stft_mel_linear(std::span<const double> x) {
  require_analyzable(x);
  const int frames = mel_frame_count(x.size());
  MelSpectrogram mel(frames, kMelBands);
#pragma omp parallel for schedule(static)
  for (int f = 0; f < frames; ++f) analyze_frame(x, f, mel);
  return mel;
}

MelSpectrogram stft_mel(std::span<const double> x) {
  MelSpectrogram mel = stft_mel_linear(x);
  apply_log(mel);
  return mel;
}

MelSpectrogram stft_mel_serial(std::span<const double> x) {
  require_analyzable(x);
  const int frames = mel_frame_count(x.size());
  MelSpectrogram mel(frames, kMelBands);
  for (int f = 0; f < frames; ++f) analyze_frame(x, f, mel);
  apply_log(mel);
  return mel;
}

MelSpectrogram conditioning_mel(std::span<const double> x) {
  constexpr std::size_t pad = (kWindow - kHop) / 2;
  if (x.size() < std::size_t(kHop)) {
    throw std::invalid_argument(fmt::format("input of {} samples is shorter than one hop", x.size()));
  }
  std::vector<double> padded(x.size() + 2 * pad, 0.0);
  std::copy(x.begin(), x.end(), padded.begin() + pad);
  return stft_mel(padded);
}

MelSpectrogram normalize_mel(const MelSpectrogram& log_mel) {
  MelSpectrogram out = log_mel;
  constexpr double db_per_neper = 20.0 / std::numbers::ln10;
  for (double& v : out.values) v = std::clamp((db_per_neper * v - 20.0 + 100.0) / 100.0, 0.0, 1.0);
  return out;
}

UpsampleTap upsample_tap(int frames, std::size_t sample, UpsampleMode mode) {
  const int f = std::min(int(sample / kHop), frames - 1);
  if (mode == UpsampleMode::repeat || f + 1 >= frames) return {f, f, 0.0};
  const double w = double(sample - std::size_t(f) * kHop) / kHop;
  return {f, f + 1, w};
}

MelSpectrogram upsample_condition(const MelSpectrogram& mel, std::size_t target_len, UpsampleMode mode) {
  if (mel.frames < 1 || std::size_t(mel.frames + 1) * kHop < target_len) {
    throw std::invalid_argument(fmt::format(
        "{} condition frames do not cover {} samples within one hop", mel.frames, target_len));
  }
  MelSpectrogram out(int(target_len), mel.bands);
  for (std::size_t i = 0; i < target_len; ++i) {
    const UpsampleTap tap = upsample_tap(mel.frames, i, mode);
    for (int b = 0; b < mel.bands; ++b) {
      out.at(int(i), b) = (1.0 - tap.weight) * mel.at(tap.lo, b) + tap.weight * mel.at(tap.hi, b);
    }
  }
  return out;
}

void write_mel_csv(std::ostream& out, const MelSpectrogram& mel) {
  out << "frame";
  for (int b = 0; b < mel.bands; ++b) out << ",b" << b;
  out << '\n';
  for (int f = 0; f < mel.frames; ++f) {
    out << f;
    for (int b = 0; b < mel.bands; ++b) out << fmt::format(",{:.9g}", mel.at(f, b));
    out << '\n';
  }
}

}  // namespace diffse
