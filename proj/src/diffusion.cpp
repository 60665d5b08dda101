#include "diffse/diffusion.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace diffse {

namespace {

void require_step(const ScheduleTable& table, int t) {
  if (t < 1 || t > table.num_steps()) {
    throw std::out_of_range(fmt::format("timestep {} outside [1, {}]", t, table.num_steps()));
  }
}

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(fmt::format("{}: length mismatch ({} vs {})", what, a, b));
}

void require_finite(std::span<const double> x, int t) {
  for (double v : x) {
    if (!std::isfinite(v)) throw std::runtime_error(fmt::format("non-finite sampler state at timestep {}", t));
  }
}

std::vector<double> draw_normal(std::size_t n, Rng& rng) {
  std::vector<double> eps(n);
  fill_normal(rng, eps);
  return eps;
}

}  // namespace

SamplingMode parse_sampling_mode(const std::string& name) {
  if (name == "none") return SamplingMode::none;
  if (name == "original") return SamplingMode::original;
  if (name == "improved") return SamplingMode::improved;
  throw std::invalid_argument(fmt::format("unknown sampling mode '{}' (expected none|original|improved)", name));
}

std::string to_string(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::none: return "none";
    case SamplingMode::original: return "original";
    case SamplingMode::improved: return "improved";
  }
  return "?";
}

std::vector<double> forward_sample(std::span<const double> x0, std::span<const double> y, int t,
                                   const ScheduleTable& table, std::span<const double> eps) {
  require_same_length(x0.size(), y.size(), "forward_sample");
  require_same_length(x0.size(), eps.size(), "forward_sample");
  require_step(table, t);
  const double cx = table.mean_x0(t), cy = table.mean_y(t), sd = std::sqrt(table.delta_bar(t));
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cx * x0[i] + cy * y[i] + sd * eps[i];
  return out;
}

std::vector<double> forward_sample(std::span<const double> x0, std::span<const double> y, int t,
                                   const ScheduleTable& table, Rng& rng) {
  require_same_length(x0.size(), y.size(), "forward_sample");
  require_step(table, t);
  const auto eps = draw_normal(x0.size(), rng);
  return forward_sample(x0, y, t, table, eps);
}

std::vector<double> vanilla_forward_sample(std::span<const double> x0, int t, const ScheduleTable& table, Rng& rng) {
  require_step(table, t);
  const double ab = table.alpha_bar(t);
  const double c = std::sqrt(ab), sd = std::sqrt(1.0 - ab);
  std::vector<double> out = draw_normal(x0.size(), rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x0[i] + sd * out[i];
  return out;
}

std::vector<double> anchor_point(std::span<const double> y, int t, const ScheduleTable& table, Rng& rng) {
  require_step(table, t);
  const double cy = table.mean_y(t), sd = std::sqrt(table.delta_bar(t));
  std::vector<double> out = draw_normal(y.size(), rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cy * y[i] + sd * out[i];
  return out;
}

std::vector<double> combined_target(std::span<const double> x0, std::span<const double> y,
                                    std::span<const double> eps, int t, const ScheduleTable& table) {
  require_same_length(x0.size(), y.size(), "combined_target");
  require_same_length(x0.size(), eps.size(), "combined_target");
  require_step(table, t);
  const double cy = table.mean_y(t), sd = std::sqrt(table.delta_bar(t)), inv = 1.0 / table.normalizer(t);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (cy * (y[i] - x0[i]) + sd * eps[i]) * inv;
  return out;
}

std::vector<double> sample_latent(std::span<const double> y, const ScheduleTable& table, Rng& rng) {
  const int T = table.num_steps();
  const double c = std::sqrt(table.alpha_bar(T)), sd = std::sqrt(table.delta_bar(T));
  std::vector<double> x = draw_normal(y.size(), rng);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = c * y[i] + sd * x[i];
  return x;
}

EnhanceResult run_reverse(std::vector<double> x, const Condition& cond, const Denoiser& denoiser,
                          const ScheduleTable& table, const SamplerOptions& opts, Rng& rng) {
  require_same_length(x.size(), cond.y.size(), "run_reverse");
  const int T = table.num_steps();
  if (opts.mode == SamplingMode::improved && (opts.t0 < 0 || opts.t0 > T)) {
    throw std::invalid_argument(fmt::format("sampler t0 must be in [0, {}], got {}", T, opts.t0));
  }
  const std::vector<double> ratios =
      opts.mode == SamplingMode::improved ? anneal_ratios(opts.t0, opts.r) : std::vector<double>{};

  EnhanceResult result;
  std::vector<double> eps_hat(x.size());
  std::vector<double> noise(x.size());
  for (int t = T; t >= 1; --t) {
    denoiser.predict(x, cond, t, eps_hat);
    const ReverseCoeffs& c = table.reverse(t);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = c.c_xt * x[i] + c.c_yt * cond.y[i] + c.c_eps * eps_hat[i];
    if (t > 1 && c.posterior_var > 0.0) {
      fill_normal(rng, noise);
      const double sd = std::sqrt(c.posterior_var);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += sd * noise[i];
    }
    if (!ratios.empty() && t <= opts.t0) {
      const double ratio = ratios[std::size_t(opts.t0 - t)];
      const auto anchor = anchor_point(cond.y, t, table, rng);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = ratio * anchor[i] + (1.0 - ratio) * x[i];
      result.interpolations.push_back({t, ratio});
    }
    require_finite(x, t);
    if (opts.record_trajectory) result.trajectory.emplace_back(x.begin(), x.end());
  }
  if (opts.mode == SamplingMode::original) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = opts.r * x[i] + (1.0 - opts.r) * cond.y[i];
  }
  result.samples = std::move(x);
  return result;
}

EnhanceResult reverse_enhance(const Condition& cond, const Denoiser& denoiser, const ScheduleTable& table,
                              const SamplerOptions& opts, Rng& rng) {
  auto latent = sample_latent(cond.y, table, rng);
  return run_reverse(std::move(latent), cond, denoiser, table, opts, rng);
}

namespace {

EnhanceResult enhance_job(const EnhanceJob& job, const Denoiser& denoiser, const ScheduleTable& table,
                          const SamplerOptions& opts) {
  Rng rng(job.seed);
  const Condition cond{job.y, job.mel, job.encoding};
  return reverse_enhance(cond, denoiser, table, opts, rng);
}

}  // namespace

std::vector<EnhanceResult> reverse_enhance_batch(std::span<const EnhanceJob> jobs, const Denoiser& denoiser,
                                                 const ScheduleTable& table, const SamplerOptions& opts) {
  std::vector<EnhanceResult> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(jobs.size()); ++i) {
    try {
      results[i] = enhance_job(jobs[i], denoiser, table, opts);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw std::runtime_error(fmt::format("utterance {}: {}", i, errors[i]));
  }
  return results;
}

std::vector<EnhanceResult> reverse_enhance_serial(std::span<const EnhanceJob> jobs, const Denoiser& denoiser,
                                                  const ScheduleTable& table, const SamplerOptions& opts) {
  std::vector<EnhanceResult> results;
  results.reserve(jobs.size());
  for (const EnhanceJob& job : jobs) results.push_back(enhance_job(job, denoiser, table, opts));
  return results;
}

void OracleDenoiser::predict(std::span<const double> x_t, const Condition&, int t, std::span<double> out) const {
  require_same_length(x_t.size(), x0_.size(), "OracleDenoiser");
  require_step(*table_, t);
  const double c = std::sqrt(table_->alpha_bar(t)), inv = 1.0 / table_->normalizer(t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - c * x0_[i]) * inv;
}

// ---- drift statistics ----

std::vector<DriftRow> forward_drift_stats(std::span<const MelSpectrogram> clean_set,
                                          std::span<const MelSpectrogram> noisy_set,
                                          const ScheduleTable& table, int num_samples, std::uint64_t seed) {
  if (clean_set.empty() || noisy_set.empty()) throw std::invalid_argument("forward_drift_stats: empty feature set");
  if (clean_set.size() != noisy_set.size()) throw std::invalid_argument("forward_drift_stats: unpaired sets");
  if (num_samples < 1) throw std::invalid_argument("forward_drift_stats: num_samples must be >= 1");
  if (table.kind() != ProcessKind::task_adapted) {
    throw std::invalid_argument("forward_drift_stats: needs a task-adapted schedule");
  }
  const std::size_t dim = clean_set.front().values.size();
  for (std::size_t i = 0; i < clean_set.size(); ++i) {
    if (clean_set[i].values.size() != dim || noisy_set[i].values.size() != dim) {
      throw std::invalid_argument("forward_drift_stats: features must share one shape");
    }
  }

  std::vector<double> clean_centroid(dim, 0.0), noisy_centroid(dim, 0.0);
  for (std::size_t i = 0; i < clean_set.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      clean_centroid[d] += clean_set[i].values[d];
      noisy_centroid[d] += noisy_set[i].values[d];
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    clean_centroid[d] /= double(clean_set.size());
    noisy_centroid[d] /= double(noisy_set.size());
  }

  const int T = table.num_steps();
  std::vector<DriftRow> rows(std::size_t(2 * (T + 1)));
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t <= T; ++t) {
    Rng rng(derive_seed(seed, std::uint64_t(t)));
    const double ab = table.alpha_bar(t);
    const double v_c = std::sqrt(ab), v_sd = std::sqrt(1.0 - ab);
    const double a_x = table.mean_x0(t), a_y = table.mean_y(t), a_sd = std::sqrt(table.delta_bar(t));

    struct Accum {
      double to_clean = 0, to_noisy = 0, to_origin = 0;
      std::vector<double> s1, s2, s3, s4;
    };
    Accum acc[2];
    for (auto& a : acc) a.s1.assign(dim, 0.0), a.s2.assign(dim, 0.0), a.s3.assign(dim, 0.0), a.s4.assign(dim, 0.0);

    std::vector<double> eps(dim), sample(dim);
    for (int s = 0; s < num_samples; ++s) {
      const auto& x0 = clean_set[std::size_t(s) % clean_set.size()].values;
      const auto& y = noisy_set[std::size_t(s) % noisy_set.size()].values;
      fill_normal(rng, eps);
      for (int p = 0; p < 2; ++p) {
        double dc = 0, dn = 0, d0 = 0;
        for (std::size_t d = 0; d < dim; ++d) {
          const double v = p == 0 ? v_c * x0[d] + v_sd * eps[d] : a_x * x0[d] + a_y * y[d] + a_sd * eps[d];
          sample[d] = v;
          dc += (v - clean_centroid[d]) * (v - clean_centroid[d]);
          dn += (v - noisy_centroid[d]) * (v - noisy_centroid[d]);
          d0 += (v - x0[d]) * (v - x0[d]);
          acc[p].s1[d] += v;
          acc[p].s2[d] += v * v;
          acc[p].s3[d] += v * v * v;
          acc[p].s4[d] += v * v * v * v;
        }
        acc[p].to_clean += std::sqrt(dc);
        acc[p].to_noisy += std::sqrt(dn);
        acc[p].to_origin += std::sqrt(d0);
      }
    }
    for (int p = 0; p < 2; ++p) {
      const double n = num_samples;
      double kurt = 0.0;
      int counted = 0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double m1 = acc[p].s1[d] / n, m2 = acc[p].s2[d] / n, m3 = acc[p].s3[d] / n, m4 = acc[p].s4[d] / n;
        const double var = m2 - m1 * m1;
        if (var <= 1e-12) continue;
        const double c4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1 * m1 * m1 * m1;
        kurt += c4 / (var * var) - 3.0;
        ++counted;
      }
      DriftRow& row = rows[std::size_t(2 * t + p)];
      row.t = t;
      row.process = p == 0 ? ProcessFamily::vanilla : ProcessFamily::task_adapted;
      row.dist_to_clean_centroid = acc[p].to_clean / n;
      row.dist_to_noisy_centroid = acc[p].to_noisy / n;
      row.dist_to_origin = acc[p].to_origin / n;
      row.excess_kurtosis = counted > 0 ? kurt / counted : 0.0;
    }
  }
  return rows;
}

void write_drift_csv(std::ostream& out, std::span<const DriftRow> rows) {
  out << "t,process,dist_to_clean_centroid,dist_to_noisy_centroid,dist_to_origin,excess_kurtosis\n";
  for (const DriftRow& r : rows) {
    out << fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g}\n", r.t,
                       r.process == ProcessFamily::vanilla ? "vanilla" : "task_adapted", r.dist_to_clean_centroid,
                       r.dist_to_noisy_centroid, r.dist_to_origin, r.excess_kurtosis);
  }
}

void write_trajectory_csv(std::ostream& out, const EnhanceResult& result) {
  out << "step,sample,value\n";
  const int T = int(result.trajectory.size());
  for (int i = 0; i < T; ++i) {
    const auto& snap = result.trajectory[std::size_t(i)];
    for (std::size_t s = 0; s < snap.size(); ++s) out << fmt::format("{},{},{:.9g}\n", T - i, s, snap[s]);
  }
}

}  // namespace diffse
