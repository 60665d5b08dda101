#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "diffse/dsp.hpp"
#include "diffse/schedule.hpp"
#include "diffse/types.hpp"

namespace diffse {

struct NoiseEncoding;

/// Everything a denoiser may condition on besides x_t and t.
struct Condition {
  std::span<const double> y;                 // noisy waveform
  const MelSpectrogram* mel = nullptr;       // normalized conditioning Mel (frame rate)
  const NoiseEncoding* encoding = nullptr;   // global noise condition
};

/// Predicts the normalized combined-noise target for x_t.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual void predict(std::span<const double> x_t, const Condition& cond, int t,
                       std::span<double> out) const = 0;
};

// ---- forward process ----

/// sqrt(ab_t)*((1-m_t)*x0 + m_t*y) + sqrt(delta_t)*eps.
std::vector<double> forward_sample(std::span<const double> x0, std::span<const double> y, int t,
                                   const ScheduleTable& table, Rng& rng);
/// Same with a caller-provided eps.
std::vector<double> forward_sample(std::span<const double> x0, std::span<const double> y, int t,
                                   const ScheduleTable& table, std::span<const double> eps);

/// sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps, ignoring the table's m_t.
std::vector<double> vanilla_forward_sample(std::span<const double> x0, int t,
                                           const ScheduleTable& table, Rng& rng);

/// m_t*sqrt(ab_t)*y + sqrt(delta_t)*eps.
std::vector<double> anchor_point(std::span<const double> y, int t, const ScheduleTable& table, Rng& rng);

/// (m_t*sqrt(ab_t)*(y - x0) + sqrt(delta_t)*eps) / normalizer(t).
std::vector<double> combined_target(std::span<const double> x0, std::span<const double> y,
                                    std::span<const double> eps, int t, const ScheduleTable& table);

// ---- reverse process ----

enum class SamplingMode { none, original, improved };

SamplingMode parse_sampling_mode(const std::string& name);
std::string to_string(SamplingMode mode);

struct SamplerOptions {
  SamplingMode mode = SamplingMode::improved;
  double r = 0.1;
  int t0 = 5;
  bool record_trajectory = false;
};

struct AppliedInterpolation {
  int t = 0;         // reverse step after which the blend happened
  double ratio = 0;  // weight of the anchor
};

struct EnhanceResult {
  std::vector<double> samples;
  /// trajectory[i] is the state after reverse step T - i (so the last entry
  /// is x_0 before any original-mode blend). Empty unless requested.
  std::vector<std::vector<float>> trajectory;
  std::vector<AppliedInterpolation> interpolations;
};

/// x_T ~ N(sqrt(ab_T)*y, delta_T*I).
std::vector<double> sample_latent(std::span<const double> y, const ScheduleTable& table, Rng& rng);

/// Runs reverse steps T..1 from the given latent. Interpolation follows
/// `opts`: in improved mode the state after each of the last t0 steps is
/// blended with a fresh anchor at that step, ratios taken largest first; in
/// original mode x_0 <- r*x_0 + (1-r)*y once at the end. Throws
/// std::runtime_error naming the timestep if the state becomes non-finite.
EnhanceResult run_reverse(std::vector<double> x_T, const Condition& cond, const Denoiser& denoiser,
                          const ScheduleTable& table, const SamplerOptions& opts, Rng& rng);

/// sample_latent followed by run_reverse.
EnhanceResult reverse_enhance(const Condition& cond, const Denoiser& denoiser,
                              const ScheduleTable& table, const SamplerOptions& opts, Rng& rng);

/// One utterance for batch enhancement.
struct EnhanceJob {
  std::span<const double> y;
  const MelSpectrogram* mel = nullptr;
  const NoiseEncoding* encoding = nullptr;
  std::uint64_t seed = 0;
};

/// Enhances independent utterances, one rng stream per job, distributing
/// jobs over OpenMP threads. The result equals reverse_enhance_serial.
std::vector<EnhanceResult> reverse_enhance_batch(std::span<const EnhanceJob> jobs, const Denoiser& denoiser,
                                                 const ScheduleTable& table, const SamplerOptions& opts);
std::vector<EnhanceResult> reverse_enhance_serial(std::span<const EnhanceJob> jobs, const Denoiser& denoiser,
                                                  const ScheduleTable& table, const SamplerOptions& opts);

/// Returns the exact combined-noise target for the queried state, computed
/// from the true clean signal: (x_t - sqrt(ab_t)*x0) / normalizer(t).
class OracleDenoiser final : public Denoiser {
 public:
  OracleDenoiser(std::vector<double> x0, const ScheduleTable& table) : x0_(std::move(x0)), table_(&table) {}
  void predict(std::span<const double> x_t, const Condition& cond, int t, std::span<double> out) const override;

 private:
  std::vector<double> x0_;
  const ScheduleTable* table_;
};

// ---- forward drift statistics ----

enum class ProcessFamily { vanilla, task_adapted };

struct DriftRow {
  int t = 0;
  ProcessFamily process = ProcessFamily::vanilla;
  double dist_to_clean_centroid = 0.0;
  double dist_to_noisy_centroid = 0.0;
  double dist_to_origin = 0.0;  // to the clean sample the draw started from
  double excess_kurtosis = 0.0; // averaged over dimensions
};

/// Diffuses paired clean/noisy feature matrices (flattened) with both the
/// vanilla and the task-adapted forward process for t = 0..T and reports
/// centroid distances and a Gaussianity proxy. Throws on empty or mismatched
/// sets.
std::vector<DriftRow> forward_drift_stats(std::span<const MelSpectrogram> clean_set,
                                          std::span<const MelSpectrogram> noisy_set,
                                          const ScheduleTable& table, int num_samples, std::uint64_t seed);

void write_drift_csv(std::ostream& out, std::span<const DriftRow> rows);
void write_trajectory_csv(std::ostream& out, const EnhanceResult& result);

}  // namespace diffse
