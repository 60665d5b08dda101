#pragma once

#include <iosfwd>
#include <span>
#include <vector>

namespace diffse {

/// Forward-process family. `vanilla` forces the interpolation coefficient
/// m_t to zero everywhere, which turns every derived quantity into the plain
/// DDPM one.
enum class ProcessKind { task_adapted, vanilla };

struct ScheduleConfig {
  int num_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.035;
  int t0 = 5;     // anchor window length
  double r = 0.1; // base interpolation ratio
  ProcessKind kind = ProcessKind::task_adapted;

  /// Throws std::invalid_argument naming the first violated field.
  void validate() const;
};

/// Mean of x_{t-1} given x_t, y and the predicted (normalized) combined
/// noise: c_xt * x_t + c_yt * y + c_eps * eps_hat. `posterior_var` is the
/// variance of the Gaussian posterior q(x_{t-1} | x_t, x_0, y).
struct ReverseCoeffs {
  double c_xt = 0.0;
  double c_yt = 0.0;
  double c_eps = 0.0;
  double posterior_var = 0.0;
};

/// Forward Markov transition q(x_t | x_{t-1}, y) = N(a*x_{t-1} + b*y, var)
/// implied by the marginals.
struct ForwardTransition {
  double a = 0.0;
  double b = 0.0;
  double var = 0.0;
};

/// Per-timestep diffusion constants. Arrays are indexed by t = 0..T where
/// t = 0 is the clean state (alpha_bar = 1, m = 0, delta_bar = 0). Immutable
/// after construction.
class ScheduleTable {
 public:
  static ScheduleTable build(const ScheduleConfig& config);

  const ScheduleConfig& config() const { return config_; }
  int num_steps() const { return config_.num_steps; }
  ProcessKind kind() const { return config_.kind; }

  double beta(int t) const { return beta_.at(t); }
  double alpha(int t) const { return 1.0 - beta_.at(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }
  /// 1 - alpha_bar, accumulated without cancellation.
  double one_minus_alpha_bar(int t) const { return one_minus_alpha_bar_.at(t); }
  double m(int t) const { return m_.at(t); }
  double delta_bar(int t) const { return delta_bar_.at(t); }
  double posterior_var(int t) const { return reverse_.at(t).posterior_var; }
  const ReverseCoeffs& reverse(int t) const { return reverse_.at(t); }
  const ForwardTransition& transition(int t) const { return transition_.at(t); }

  /// Marginal mean coefficients: E[x_t] = mean_x0(t) * x0 + mean_y(t) * y.
  double mean_x0(int t) const;
  double mean_y(int t) const;

  /// Scale dividing the raw combined noise to form the training target.
  double normalizer(int t) const;

  /// Annealed anchor ratios for the configured (t0, r), largest first.
  std::span<const double> anneal() const { return anneal_; }

  /// CSV columns: t, beta, alpha_bar, m, delta_bar, posterior_var.
  void write_csv(std::ostream& out) const;

 private:
  ScheduleConfig config_;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  std::vector<double> one_minus_alpha_bar_;
  std::vector<double> m_;
  std::vector<double> delta_bar_;
  std::vector<ReverseCoeffs> reverse_;
  std::vector<ForwardTransition> transition_;
  std::vector<double> anneal_;
};

/// [r*(t0-k)/t0 for k = 0..t0-1]; element k is applied at reverse index
/// t0-1-k. t0 = 0 yields an empty list.
std::vector<double> anneal_ratios(int t0, double r);

/// Exact Gaussian-posterior coefficients for the reverse step t -> t-1.
/// Valid for 1 <= t <= T; at t = 1 the posterior collapses onto x_0 and the
/// variance is zero. Throws std::domain_error when delta_bar[t] is too small
/// to divide by.
ReverseCoeffs derive_reverse_coeffs(const ScheduleTable& table, int t);

}  // namespace diffse
