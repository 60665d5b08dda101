#include "diffse/schedule.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

namespace diffse {

namespace {

constexpr double kNegativeSlack = 1e-12;
constexpr double kDegenerateVariance = 1e-15;

double clamp_slack(double value, const char* what, int t) {
  if (value >= 0.0) return value;
  if (value >= -kNegativeSlack) return 0.0;
  throw std::invalid_argument(
      fmt::format("schedule is numerically invalid: {}[{}] = {:.3e} < 0", what, t, value));
}

}  // namespace

void ScheduleConfig::validate() const {
  if (num_steps < 2) {
    throw std::invalid_argument(fmt::format("schedule.num_steps must be >= 2, got {}", num_steps));
  }
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument(fmt::format(
        "schedule.beta range must satisfy 0 < beta_start <= beta_end < 1, got [{}, {}]",
        beta_start, beta_end));
  }
  if (t0 < 0 || t0 > num_steps) {
    throw std::invalid_argument(fmt::format("schedule.t0 must be in [0, {}], got {}", num_steps, t0));
  }
  if (!(r >= 0.0 && r <= 1.0)) {
    throw std::invalid_argument(fmt::format("schedule.r must be in [0, 1], got {}", r));
  }
}

std::vector<double> anneal_ratios(int t0, double r) {
  if (t0 < 0) throw std::invalid_argument("anneal_ratios: t0 must be >= 0");
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("anneal_ratios: r must be in [0, 1]");
  std::vector<double> ratios;
  ratios.reserve(static_cast<std::size_t>(t0));
  for (int k = 0; k < t0; ++k) {
    ratios.push_back(r / static_cast<double>(t0) * static_cast<double>(t0 - k));
  }
  return ratios;
}

ScheduleTable ScheduleTable::build(const ScheduleConfig& config) {
  config.validate();
  const int steps = config.num_steps;

  ScheduleTable table;
  table.config_ = config;
  table.beta_.assign(steps + 1, 0.0);
  table.alpha_bar_.assign(steps + 1, 1.0);
  table.one_minus_alpha_bar_.assign(steps + 1, 0.0);
  table.m_.assign(steps + 1, 0.0);
  table.delta_bar_.assign(steps + 1, 0.0);

  // 1 - m^2 * ab - ab = (1 - ab)(1 - sqrt(ab)) = (1 - ab)^2 / (1 + sqrt(ab)).
  double log_ab = 0.0;
  for (int t = 1; t <= steps; ++t) {
    table.beta_[t] = config.beta_start +
                     (config.beta_end - config.beta_start) * static_cast<double>(t - 1) /
                         static_cast<double>(steps - 1);
    log_ab += std::log1p(-table.beta_[t]);
    const double ab = std::exp(log_ab);
    const double omab = -std::expm1(log_ab);
    table.alpha_bar_[t] = ab;
    table.one_minus_alpha_bar_[t] = omab;
    if (config.kind == ProcessKind::task_adapted) {
      table.m_[t] = std::sqrt(omab / std::sqrt(ab));
      table.delta_bar_[t] = omab * omab / (1.0 + std::sqrt(ab));
    } else {
      table.delta_bar_[t] = omab;
    }
  }

  table.transition_.assign(steps + 1, ForwardTransition{});
  for (int t = 1; t <= steps; ++t) {
    const double prev_gap = 1.0 - table.m_[t - 1];
    if (std::abs(prev_gap) < 1e-12) {
      throw std::invalid_argument(fmt::format("schedule is degenerate: m[{}] = 1", t - 1));
    }
    ForwardTransition& tr = table.transition_[t];
    tr.a = std::sqrt(table.alpha(t)) * (1.0 - table.m_[t]) / prev_gap;
    tr.b = table.mean_y(t) - tr.a * table.mean_y(t - 1);
    tr.var = clamp_slack(table.delta_bar_[t] - tr.a * tr.a * table.delta_bar_[t - 1],
                         "transition_var", t);
  }

  table.reverse_.assign(steps + 1, ReverseCoeffs{});
  for (int t = 1; t <= steps; ++t) {
    table.reverse_[t] = derive_reverse_coeffs(table, t);
  }
  table.anneal_ = anneal_ratios(config.t0, config.r);
  return table;
}

double ScheduleTable::mean_x0(int t) const {
  return std::sqrt(alpha_bar(t)) * (1.0 - m(t));
}

double ScheduleTable::mean_y(int t) const {
  return std::sqrt(alpha_bar(t)) * m(t);
}

double ScheduleTable::normalizer(int t) const {
  if (t < 1 || t > num_steps()) {
    throw std::out_of_range(fmt::format("timestep {} outside [1, {}]", t, num_steps()));
  }
  return std::sqrt(one_minus_alpha_bar(t));
}

ReverseCoeffs derive_reverse_coeffs(const ScheduleTable& table, int t) {
  if (t < 1 || t > table.num_steps()) {
    throw std::out_of_range(fmt::format("reverse step {} outside [1, {}]", t, table.num_steps()));
  }
  const double delta_t = table.delta_bar(t);
  const double delta_prev = table.delta_bar(t - 1);
  if (delta_t < kDegenerateVariance) {
    throw std::domain_error(
        fmt::format("degenerate reverse step t={}: delta_bar = {:.3e}", t, delta_t));
  }

  // Posterior of x_{t-1}: prior N(mu_{t-1}, delta_{t-1}) observed through
  // x_t = a*x_{t-1} + b*y + noise, so E = mu_{t-1} + gain * (x_t - mu_t).
  const double ratio = (1.0 - table.m(t)) / (1.0 - table.m(t - 1));
  const double a = std::sqrt(table.alpha(t)) * ratio;
  const double gain = a * delta_prev / delta_t;

  // x0 = (x_t - N_t) / sqrt(alpha_bar_t) with N_t the raw combined noise.
  const double sqrt_ab = std::sqrt(table.alpha_bar(t));
  const double x0_weight = table.mean_x0(t - 1) - gain * table.mean_x0(t);

  ReverseCoeffs c;
  c.c_xt = gain + x0_weight / sqrt_ab;
  c.c_yt = table.mean_y(t - 1) - gain * table.mean_y(t);
  c.c_eps = -x0_weight / sqrt_ab * table.normalizer(t);
  const double var = delta_prev * table.transition(t).var / delta_t;
  c.posterior_var = clamp_slack(var, "posterior_var", t);
  return c;
}

void ScheduleTable::write_csv(std::ostream& out) const {
  out << "t,beta,alpha_bar,m,delta_bar,posterior_var\n";
  for (int t = 1; t <= num_steps(); ++t) {
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", t, beta(t), alpha_bar(t),
                       m(t), delta_bar(t), posterior_var(t));
  }
}

}  // namespace diffse
