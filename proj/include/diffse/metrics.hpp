#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "diffse/dataset.hpp"

namespace diffse {

inline constexpr double kMetricCapDb = 100.0;

/// Scale-invariant SDR in dB, clamped to [-100, 100]. Throws
/// std::invalid_argument for length mismatch or a zero-energy reference.
double si_sdr(std::span<const double> reference, std::span<const double> estimate);

/// 10*log10(|ref|^2 / |ref - est|^2), clamped like si_sdr.
double snr_db(std::span<const double> reference, std::span<const double> estimate);

/// Mean absolute difference of the natural-log Mel spectrograms.
double mel_l1(std::span<const double> reference, std::span<const double> estimate);

struct EvalRow {
  std::string id;
  int noise_class = 0;
  double input_snr_db = 0.0;  // manifest value
  double si_sdr = 0.0;
  double snr = 0.0;
  double mel_l1 = 0.0;
  double delta_si_sdr = 0.0;  // vs the unprocessed noisy signal
  double delta_snr = 0.0;
  double delta_mel_l1 = 0.0;
};

struct EvalSummary {
  std::string group;  // "all", "snr=2.5", "class=1", ...
  int count = 0;
  double si_sdr = 0.0, snr = 0.0, mel_l1 = 0.0;
  double delta_si_sdr = 0.0, delta_snr = 0.0, delta_mel_l1 = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;          // sorted by id
  std::vector<EvalSummary> summaries; // "all" first, then per SNR, then per class
};

/// Scores one utterance against its clean reference and the unprocessed input.
EvalRow evaluate_utterance(const std::string& id, int noise_class, double input_snr_db,
                           std::span<const double> clean, std::span<const double> noisy,
                           std::span<const double> enhanced);

/// Aggregates rows into an EvalReport (arithmetic means).
EvalReport summarize(std::vector<EvalRow> rows);

/// Reads `<enhanced_dir>/<id>.wav` for every test row of the manifest.
/// Throws std::runtime_error listing every missing file.
EvalReport evaluate_corpus(const Manifest& manifest, const std::filesystem::path& enhanced_dir);

void write_report_csv(std::ostream& out, const EvalReport& report);

}  // namespace diffse
