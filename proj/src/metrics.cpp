#include "diffse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "diffse/dsp.hpp"

namespace diffse {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double ratio_db(double signal, double distortion) {
  if (distortion <= 0.0) return kMetricCapDb;
  if (signal <= 0.0) return -kMetricCapDb;
  return std::clamp(10.0 * std::log10(signal / distortion), -kMetricCapDb, kMetricCapDb);
}

void check_pair(std::span<const double> reference, std::span<const double> estimate, const char* what) {
  if (reference.size() != estimate.size()) {
    throw std::invalid_argument(fmt::format("{}: length mismatch ({} vs {})", what, reference.size(), estimate.size()));
  }
  if (dot(reference, reference) <= 0.0) throw std::invalid_argument(fmt::format("{}: zero-energy reference", what));
}

}  // namespace

double si_sdr(std::span<const double> reference, std::span<const double> estimate) {
  check_pair(reference, estimate, "si_sdr");
  const double ref_energy = dot(reference, reference);
  const double scale = dot(estimate, reference) / ref_energy;
  double target = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double s = scale * reference[i];
    const double e = estimate[i] - s;
    target += s * s;
    residual += e * e;
  }
  if (target <= 0.0) return -kMetricCapDb;
  // Residual energy below rounding of the projection counts as exact.
  if (residual <= 1e-20 * target) return kMetricCapDb;
  return ratio_db(target, residual);
}

double snr_db(std::span<const double> reference, std::span<const double> estimate) {
  check_pair(reference, estimate, "snr_db");
  double err = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) err += (reference[i] - estimate[i]) * (reference[i] - estimate[i]);
  return ratio_db(dot(reference, reference), err);
}

double mel_l1(std::span<const double> reference, std::span<const double> estimate) {
  if (reference.size() != estimate.size()) throw std::invalid_argument("mel_l1: length mismatch");
  const MelSpectrogram a = stft_mel(reference), b = stft_mel(estimate);
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
  return s / double(a.values.size());
}

EvalRow evaluate_utterance(const std::string& id, int noise_class, double input_snr_db,
                           std::span<const double> clean, std::span<const double> noisy,
                           std::span<const double> enhanced) {
  EvalRow row;
  row.id = id;
  row.noise_class = noise_class;
  row.input_snr_db = input_snr_db;
  row.si_sdr = si_sdr(clean, enhanced);
  row.snr = snr_db(clean, enhanced);
  row.mel_l1 = mel_l1(clean, enhanced);
  row.delta_si_sdr = row.si_sdr - si_sdr(clean, noisy);
  row.delta_snr = row.snr - snr_db(clean, noisy);
  row.delta_mel_l1 = row.mel_l1 - mel_l1(clean, noisy);
  return row;
}

EvalReport summarize(std::vector<EvalRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) { return a.id < b.id; });
  EvalReport report;
  report.rows = std::move(rows);

  auto aggregate = [](const std::string& group, const std::vector<const EvalRow*>& members) {
    EvalSummary s;
    s.group = group;
    s.count = int(members.size());
    for (const EvalRow* r : members) {
      s.si_sdr += r->si_sdr;
      s.snr += r->snr;
      s.mel_l1 += r->mel_l1;
      s.delta_si_sdr += r->delta_si_sdr;
      s.delta_snr += r->delta_snr;
      s.delta_mel_l1 += r->delta_mel_l1;
    }
    if (s.count > 0) {
      const double n = s.count;
      s.si_sdr /= n, s.snr /= n, s.mel_l1 /= n;
      s.delta_si_sdr /= n, s.delta_snr /= n, s.delta_mel_l1 /= n;
    }
    return s;
  };

  std::vector<const EvalRow*> all;
  std::map<double, std::vector<const EvalRow*>> by_snr;
  std::map<int, std::vector<const EvalRow*>> by_class;
  for (const EvalRow& r : report.rows) {
    all.push_back(&r);
    by_snr[r.input_snr_db].push_back(&r);
    by_class[r.noise_class].push_back(&r);
  }
  report.summaries.push_back(aggregate("all", all));
  for (const auto& [snr, members] : by_snr) report.summaries.push_back(aggregate(fmt::format("snr={}", snr), members));
  for (const auto& [cls, members] : by_class) report.summaries.push_back(aggregate(fmt::format("class={}", cls), members));
  return report;
}

EvalReport evaluate_corpus(const Manifest& manifest, const std::filesystem::path& enhanced_dir) {
  std::vector<const ManifestRecord*> test;
  for (const ManifestRecord& r : manifest.records) {
    if (r.split == Split::test) test.push_back(&r);
  }
  std::vector<std::string> missing;
  for (const ManifestRecord* r : test) {
    if (!std::filesystem::exists(enhanced_dir / (r->id + ".wav"))) missing.push_back(r->id + ".wav");
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += "\n  " + m;
    throw std::runtime_error(fmt::format("{} enhanced file(s) missing in {}:{}", missing.size(), enhanced_dir.string(), list));
  }

  std::vector<EvalRow> rows(test.size());
  std::vector<std::string> errors(test.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(test.size()); ++i) {
    try {
      const ManifestRecord& r = *test[i];
      const Waveform clean = read_wav(manifest.resolve(r.clean_path));
      const Waveform noisy = read_wav(manifest.resolve(r.noisy_path));
      const Waveform enhanced = read_wav(enhanced_dir / (r.id + ".wav"));
      rows[i] = evaluate_utterance(r.id, r.noise_class, r.snr_db, clean.samples, noisy.samples, enhanced.samples);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw std::runtime_error(e);
  }
  return summarize(std::move(rows));
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "kind,id,group,count,noise_class,input_snr_db,si_sdr,snr,mel_l1,delta_si_sdr,delta_snr,delta_mel_l1\n";
  for (const EvalRow& r : report.rows) {
    out << fmt::format("utterance,{},,1,{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.id, r.noise_class,
                       r.input_snr_db, r.si_sdr, r.snr, r.mel_l1, r.delta_si_sdr, r.delta_snr, r.delta_mel_l1);
  }
  for (const EvalSummary& s : report.summaries) {
    out << fmt::format("summary,,{},{},,,{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", s.group, s.count, s.si_sdr,
                       s.snr, s.mel_l1, s.delta_si_sdr, s.delta_snr, s.delta_mel_l1);
  }
}

}  // namespace diffse
