#include "diffse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <fftw3.h>
#include <fmt/format.h>

#include "diffse/dsp.hpp"

namespace diffse {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kCleanPeak = 0.5;
constexpr double kStoragePeak = 0.99;

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Filters white noise in the frequency domain: X[k] *= gain(f_k).
template <typename Gain>
std::vector<double> shape_noise(std::vector<double> x, Gain gain) {
  const int n = int(x.size());
  const int bins = n / 2 + 1;
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(bins));
  auto* spec_ptr = reinterpret_cast<fftw_complex*>(spec.data());
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(n, x.data(), spec_ptr, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(n, spec_ptr, x.data(), FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (int k = 0; k < bins; ++k) spec[std::size_t(k)] *= gain(double(k) * kSampleRate / n);
  fftw_execute(inv);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  for (double& v : x) v /= n;
  return x;
}

std::vector<double> white(std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  fill_normal(rng, x);
  return x;
}

void scale_to_rms(std::vector<double>& x, double target) {
  double p = 0.0;
  for (double v : x) p += v * v;
  const double rms = std::sqrt(p / double(x.size()));
  if (rms <= 0.0) throw std::runtime_error("cannot normalize a silent signal");
  for (double& v : x) v *= target / rms;
}

double power(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return p / double(x.size());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string id_prefix(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::uint64_t split_offset(Split split) {
  switch (split) {
    case Split::train: return 0;
    case Split::validation: return 1'000'000;
    case Split::test: return 2'000'000;
  }
  return 0;
}

int split_count(const CorpusConfig& config, Split split) {
  switch (split) {
    case Split::train: return config.num_train;
    case Split::validation: return config.num_validation;
    case Split::test: return config.num_test;
  }
  return 0;
}

}  // namespace

std::string to_string(CleanKind kind) {
  switch (kind) {
    case CleanKind::harmonic: return "harmonic";
    case CleanKind::chirp: return "chirp";
    case CleanKind::am_tone: return "am_tone";
  }
  return "?";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "validation" || name == "val") return Split::validation;
  if (name == "test") return Split::test;
  throw std::invalid_argument(fmt::format("unknown split '{}'", name));
}

std::string noise_class_name(int class_id) {
  static constexpr const char* names[] = {"white", "pink", "hum", "babble"};
  if (class_id < 0 || class_id >= kNumNoiseClasses) throw std::invalid_argument(fmt::format("unknown noise class {}", class_id));
  return names[class_id];
}

std::size_t MixSpec::num_samples() const { return std::size_t(std::llround(duration_s * kSampleRate)); }

void MixSpec::validate() const {
  const auto in = [&](const auto& set) { return std::find(set.begin(), set.end(), snr_db) != set.end(); };
  if (!in(kTrainSnrs) && !in(kTestSnrs)) {
    throw std::invalid_argument(fmt::format("snr_db {} is not in the train or test SNR set", snr_db));
  }
  if (noise_class < 0 || noise_class >= kNumNoiseClasses) {
    throw std::invalid_argument(fmt::format("noise_class {} outside [0, {})", noise_class, kNumNoiseClasses));
  }
  if (!(duration_s >= 0.5)) throw std::invalid_argument(fmt::format("duration_s {} < 0.5", duration_s));
}

Waveform synth_clean(const MixSpec& spec) {
  Rng rng(derive_seed(spec.seed, 0xc1ea));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const std::size_t n = spec.num_samples();
  std::vector<double> x(n, 0.0);

  switch (spec.clean_kind) {
    case CleanKind::harmonic: {
      const double f0 = spec.f0_hz.value_or(uniform(100.0, 300.0));
      const double vib_rate = uniform(3.0, 6.0);
      double phase = 0.0;
      std::vector<double> offsets;
      for (int k = 1; k * f0 <= 4000.0; ++k) offsets.push_back(uniform(0.0, kTwoPi));
      for (std::size_t i = 0; i < n; ++i) {
        const double t = double(i) / kSampleRate;
        phase += kTwoPi * f0 * (1.0 + 0.01 * std::sin(kTwoPi * vib_rate * t)) / kSampleRate;
        double v = 0.0;
        for (std::size_t k = 0; k < offsets.size(); ++k) v += std::sin(double(k + 1) * phase + offsets[k]) / double(k + 1);
        x[i] = v;
      }
      break;
    }
    case CleanKind::chirp: {
      const double f1 = uniform(150.0, 400.0), f2 = uniform(800.0, 2500.0);
      const double duration = double(n) / kSampleRate;
      double phase = uniform(0.0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = double(i) / kSampleRate;
        phase += kTwoPi * f1 * std::pow(f2 / f1, t / duration) / kSampleRate;
        x[i] = std::sin(phase) + 0.5 * std::sin(2.0 * phase);
      }
      break;
    }
    case CleanKind::am_tone: {
      const double fc = uniform(300.0, 1500.0), fm = uniform(2.0, 8.0);
      const double pc = uniform(0.0, kTwoPi), pm = uniform(0.0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = double(i) / kSampleRate;
        x[i] = (1.0 + 0.8 * std::sin(kTwoPi * fm * t + pm)) * std::sin(kTwoPi * fc * t + pc);
      }
      break;
    }
  }

  const double env_rate = uniform(1.0, 3.0), env_phase = uniform(0.0, kTwoPi);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] *= 0.6 + 0.4 * std::sin(kTwoPi * env_rate * double(i) / kSampleRate + env_phase);
    peak = std::max(peak, std::abs(x[i]));
  }
  for (double& v : x) v *= kCleanPeak / peak;
  return Waveform{std::move(x), kSampleRate};
}

Waveform synth_noise(int class_id, double duration_s, std::uint64_t seed) {
  if (class_id < 0 || class_id >= kNumNoiseClasses) {
    throw std::invalid_argument(fmt::format("unknown noise class {}", class_id));
  }
  const std::size_t n = std::size_t(std::llround(duration_s * kSampleRate));
  if (n < 2) throw std::invalid_argument("synth_noise: duration too short");
  Rng rng(derive_seed(seed, 0x7015e + std::uint64_t(class_id)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  std::vector<double> x;

  switch (NoiseClass(class_id)) {
    case NoiseClass::white:
      x = white(n, rng);
      break;
    case NoiseClass::pink:
      x = shape_noise(white(n, rng), [](double f) { return f > 0.0 ? 1.0 / std::sqrt(f) : 0.0; });
      break;
    case NoiseClass::hum: {
      x = white(n, rng);
      for (double& v : x) v *= 0.05;
      std::vector<double> phases;
      for (int k = 1; k < 20; ++k) phases.push_back(uniform(0.0, kTwoPi));
      for (std::size_t i = 0; i < n; ++i) {
        const double t = double(i) / kSampleRate;
        for (int k = 1; k < 20; ++k) x[i] += std::sin(kTwoPi * 50.0 * k * t + phases[std::size_t(k - 1)]) / k;
      }
      break;
    }
    case NoiseClass::babble: {
      x.assign(n, 0.0);
      for (int talker = 0; talker < 6; ++talker) {
        const double lo = uniform(200.0, 800.0);
        const double rate = uniform(2.0, 6.0), phase = uniform(0.0, kTwoPi);
        const auto band = shape_noise(white(n, rng), [lo](double f) { return f >= lo && f <= 3.0 * lo ? 1.0 : 0.0; });
        for (std::size_t i = 0; i < n; ++i) {
          x[i] += band[i] * (1.0 + std::sin(kTwoPi * rate * double(i) / kSampleRate + phase));
        }
      }
      break;
    }
  }
  scale_to_rms(x, 1.0);
  return Waveform{std::move(x), kSampleRate};
}

Mixture mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db) {
  if (clean.size() != noise.size()) {
    throw std::invalid_argument(fmt::format("mix_at_snr: length mismatch ({} vs {})", clean.size(), noise.size()));
  }
  const double pc = power(clean.samples), pn = power(noise.samples);
  if (pc <= 0.0 || pn <= 0.0) throw std::invalid_argument("mix_at_snr: zero-power input");
  Mixture mix;
  mix.gain = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
  mix.noisy.samples.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) mix.noisy.samples[i] = clean.samples[i] + mix.gain * noise.samples[i];
  return mix;
}

MixSpec corpus_spec(const CorpusConfig& config, Split split, int index) {
  const std::uint64_t seed = derive_seed(config.seed, split_offset(split) + std::uint64_t(index));
  Rng rng(seed);
  const auto& snrs = split == Split::test ? kTestSnrs : kTrainSnrs;
  MixSpec spec;
  spec.noise_class = index % kNumNoiseClasses;
  spec.clean_kind = CleanKind((index / kNumNoiseClasses) % 3);
  spec.snr_db = snrs[std::size_t(rng() % snrs.size())];
  spec.duration_s = config.duration_s;
  spec.seed = seed;
  return spec;
}

std::vector<Utterance> generate_split(const CorpusConfig& config, Split split) {
  const int count = split_count(config, split);
  std::vector<Utterance> out(std::size_t(std::max(count, 0)));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    const MixSpec spec = corpus_spec(config, split, i);
    spec.validate();
    Utterance& u = out[std::size_t(i)];
    u.id = fmt::format("{}_{:04d}", id_prefix(split), i);
    u.split = split;
    u.noise_class = spec.noise_class;
    u.snr_db = spec.snr_db;
    u.clean_kind = spec.clean_kind;
    u.clean = synth_clean(spec);
    const Waveform noise = synth_noise(spec.noise_class, spec.duration_s, spec.seed);
    u.noisy = mix_at_snr(u.clean, noise, spec.snr_db).noisy;
    // Keep the stored pair inside the 16-bit range without clipping.
    double peak = 0.0;
    for (double v : u.noisy.samples) peak = std::max(peak, std::abs(v));
    if (peak > kStoragePeak) {
      const double s = kStoragePeak / peak;
      for (double& v : u.noisy.samples) v *= s;
      for (double& v : u.clean.samples) v *= s;
    }
  }
  return out;
}

std::filesystem::path Manifest::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<const ManifestRecord*> Manifest::split(Split s) const {
  std::vector<const ManifestRecord*> out;
  for (const ManifestRecord& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
  out << "id,split,clean_path,noisy_path,noise_class,snr_db\n";
  for (const ManifestRecord& r : manifest.records) {
    out << fmt::format("{},{},{},{},{},{}\n", r.id, to_string(r.split), r.clean_path, r.noisy_path, r.noise_class, r.snr_db);
  }
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open manifest {}", path.string()));
  Manifest manifest;
  manifest.base_dir = path.parent_path();
  std::string line;
  if (!std::getline(in, line) || line != "id,split,clean_path,noisy_path,noise_class,snr_db") {
    throw std::invalid_argument(fmt::format("{}: unexpected manifest header", path.string()));
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw std::invalid_argument(fmt::format("{}:{}: expected 6 fields", path.string(), line_no));
    ManifestRecord r;
    r.id = f[0];
    r.split = parse_split(f[1]);
    r.clean_path = f[2];
    r.noisy_path = f[3];
    r.noise_class = std::stoi(f[4]);
    r.snr_db = std::stod(f[5]);
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

Manifest build_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "clean");
  fs::create_directories(out_dir / "noisy");
  Manifest manifest;
  manifest.base_dir = out_dir;
  for (Split split : {Split::train, Split::validation, Split::test}) {
    const auto utterances = generate_split(config, split);
    std::vector<std::string> errors(utterances.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(utterances.size()); ++i) {
      try {
        const Utterance& u = utterances[std::size_t(i)];
        write_wav(out_dir / "clean" / (u.id + ".wav"), u.clean);
        write_wav(out_dir / "noisy" / (u.id + ".wav"), u.noisy);
      } catch (const std::exception& e) {
        errors[std::size_t(i)] = e.what();
      }
    }
    for (const auto& e : errors) {
      if (!e.empty()) throw std::runtime_error(e);
    }
    for (const Utterance& u : utterances) {
      manifest.records.push_back({u.id, u.split, "clean/" + u.id + ".wav", "noisy/" + u.id + ".wav", u.noise_class, u.snr_db});
    }
  }
  std::ofstream out(out_dir / "manifest.csv");
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", (out_dir / "manifest.csv").string()));
  write_manifest(out, manifest);
  return manifest;
}

Manifest import_triplets(const std::filesystem::path& listing) {
  std::ifstream in(listing);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", listing.string()));
  std::string line;
  if (!std::getline(in, line) || line != "clean_path,noisy_path,noise_class,split") {
    throw std::invalid_argument(fmt::format("{}: expected header clean_path,noisy_path,noise_class,split", listing.string()));
  }
  Manifest manifest;
  manifest.base_dir = listing.parent_path();
  int index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw std::invalid_argument(fmt::format("{}: expected 4 fields in '{}'", listing.string(), line));
    ManifestRecord r;
    r.id = fmt::format("ext_{:04d}", index++);
    r.clean_path = f[0];
    r.noisy_path = f[1];
    r.noise_class = std::stoi(f[2]);
    r.split = parse_split(f[3]);
    const Waveform clean = read_wav(manifest.resolve(r.clean_path));
    const Waveform noisy = read_wav(manifest.resolve(r.noisy_path));
    if (clean.size() != noisy.size()) throw std::invalid_argument(fmt::format("{}: clean/noisy length mismatch", r.noisy_path));
    double pn = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) pn += (noisy.samples[i] - clean.samples[i]) * (noisy.samples[i] - clean.samples[i]);
    r.snr_db = 10.0 * std::log10(power(clean.samples) * double(clean.size()) / pn);
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

std::vector<Utterance> load_split(const Manifest& manifest, Split split) {
  std::vector<Utterance> out;
  for (const ManifestRecord* r : manifest.split(split)) {
    Utterance u;
    u.id = r->id;
    u.split = r->split;
    u.noise_class = r->noise_class;
    u.snr_db = r->snr_db;
    u.clean = read_wav(manifest.resolve(r->clean_path));
    u.noisy = read_wav(manifest.resolve(r->noisy_path));
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace diffse
