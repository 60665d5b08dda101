#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffse/types.hpp"

namespace diffse {

inline constexpr int kNumNoiseClasses = 4;
inline constexpr std::array<double, 4> kTrainSnrs{0.0, 5.0, 10.0, 15.0};
inline constexpr std::array<double, 4> kTestSnrs{2.5, 7.5, 12.5, 17.5};

enum class CleanKind { harmonic, chirp, am_tone };
enum class NoiseClass { white = 0, pink = 1, hum = 2, babble = 3 };
enum class Split { train, validation, test };

std::string to_string(CleanKind kind);
std::string to_string(Split split);
Split parse_split(const std::string& name);
std::string noise_class_name(int class_id);

struct MixSpec {
  CleanKind clean_kind = CleanKind::harmonic;
  int noise_class = 0;
  double snr_db = 0.0;
  double duration_s = 1.0;
  std::uint64_t seed = 0;
  std::optional<double> f0_hz;  // harmonic fundamental; random when absent

  std::size_t num_samples() const;
  /// Throws std::invalid_argument unless snr_db is in the train or test SNR
  /// set, the class exists and duration_s >= 0.5.
  void validate() const;
};

/// Deterministic band-limited stand-in for a speech utterance, peak 0.5.
Waveform synth_clean(const MixSpec& spec);

/// Unit-RMS noise of the given class: 0 white, 1 pink (1/f), 2 mains hum
/// (50 Hz and harmonics), 3 babble proxy (amplitude-modulated band noise).
Waveform synth_noise(int class_id, double duration_s, std::uint64_t seed);

struct Mixture {
  Waveform noisy;
  double gain = 0.0;  // applied to the noise
};

/// noisy = clean + gain*noise with 10*log10(P_clean / P_{gain*noise}) = snr_db.
Mixture mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db);

struct Utterance {
  std::string id;
  Split split = Split::train;
  Waveform clean;
  Waveform noisy;
  int noise_class = 0;
  double snr_db = 0.0;
  CleanKind clean_kind = CleanKind::harmonic;
};

struct CorpusConfig {
  int num_train = 400;
  int num_validation = 50;
  int num_test = 50;
  double duration_s = 1.0;
  std::uint64_t seed = 1234;
};

/// MixSpec of utterance `index` within `split` (class stratified by index).
MixSpec corpus_spec(const CorpusConfig& config, Split split, int index);

/// Generates the utterances of one split in memory.
std::vector<Utterance> generate_split(const CorpusConfig& config, Split split);

struct ManifestRecord {
  std::string id;
  Split split = Split::train;
  std::string clean_path;  // relative to the manifest directory unless absolute
  std::string noisy_path;
  int noise_class = 0;
  double snr_db = 0.0;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const std::string& path) const;
  std::vector<const ManifestRecord*> split(Split s) const;
};

/// CSV header: id,split,clean_path,noisy_path,noise_class,snr_db
void write_manifest(std::ostream& out, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Writes every split as WAV pairs under `out_dir` (clean/, noisy/) plus
/// out_dir/manifest.csv. Utterances are generated in parallel; the manifest
/// is written once, in id order.
Manifest build_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir);

/// Builds a manifest from external (clean, noisy, label, split) WAV
/// triplets listed in a CSV with header clean_path,noisy_path,noise_class,split.
/// The SNR column is measured from the signals.
Manifest import_triplets(const std::filesystem::path& listing);

/// Loads the utterances of a manifest split from disk.
std::vector<Utterance> load_split(const Manifest& manifest, Split split);

}  // namespace diffse
