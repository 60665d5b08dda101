#include <cmath>
#include <sstream>

#include <doctest.h>

#include "diffse/schedule.hpp"

using namespace diffse;

namespace {

double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

ScheduleTable default_table() { return ScheduleTable::build(ScheduleConfig{}); }

// Independent long-double recomputation of the marginals.
struct Ref {
  std::vector<long double> ab, m, delta;
  explicit Ref(int T = 50, long double b0 = 1e-4L, long double b1 = 0.035L) : ab(T + 1, 1.0L), m(T + 1, 0.0L), delta(T + 1, 0.0L) {
    for (int t = 1; t <= T; ++t) {
      const long double beta = b0 + (b1 - b0) * (t - 1) / (T - 1);
      ab[t] = ab[t - 1] * (1.0L - beta);
      m[t] = std::sqrt((1.0L - ab[t]) / std::sqrt(ab[t]));
      delta[t] = 1.0L - (1.0L + m[t] * m[t]) * ab[t];
    }
  }
};

}  // namespace

TEST_SUITE("schedule") {

TEST_CASE("beta is linear with inclusive endpoints") {
  const auto table = default_table();
  CHECK(table.beta(1) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(table.beta(50) == doctest::Approx(0.035).epsilon(1e-15));
  // mpmath: 1e-4 + (0.035 - 1e-4) * 24 / 49
  CHECK(rel_err(table.beta(25), 0.017193877551020408) < 1e-14);
}

TEST_CASE("t = 0 is the clean state") {
  const auto table = default_table();
  CHECK(table.alpha_bar(0) == 1.0);
  CHECK(table.m(0) == 0.0);
  CHECK(table.delta_bar(0) == 0.0);
}

TEST_CASE("frozen extended-precision values") {
  const auto table = default_table();
  // Values computed with mpmath at 40 significant digits.
  CHECK(rel_err(table.m(1), 0.010000250015626172) < 1e-12);
  CHECK(rel_err(table.delta_bar(1), 5.000125006250390e-9) < 1e-12);
  CHECK(rel_err(table.alpha_bar(50), 0.41146639796184526) < 1e-12);
  CHECK(rel_err(table.m(50), 0.95786000126225) < 1e-12);
  CHECK(rel_err(table.delta_bar(50), 0.21101491746597319) < 1e-12);
  CHECK(rel_err(table.mean_y(5), 0.08702195130462169) < 1e-12);
  CHECK(rel_err(table.posterior_var(2), 4.9425e-9) < 1e-3);
  CHECK(rel_err(table.posterior_var(50), 0.117329) < 1e-4);
}

TEST_CASE("marginals agree with a long-double recomputation") {
  const auto table = default_table();
  const Ref ref;
  for (int t = 1; t <= 50; ++t) {
    CHECK(rel_err(table.alpha_bar(t), double(ref.ab[t])) < 1e-13);
    CHECK(rel_err(table.m(t), double(ref.m[t])) < 1e-12);
    CHECK(rel_err(table.delta_bar(t), double(ref.delta[t])) < 1e-10);
  }
}

TEST_CASE("delta_bar equals (1 - ab)(1 - sqrt(ab))") {
  const auto table = default_table();
  for (int t = 1; t <= 50; ++t) {
    const double ab = table.alpha_bar(t);
    CHECK(rel_err(table.delta_bar(t), (1 - ab) * (1 - std::sqrt(ab))) < 1e-6);
  }
}

TEST_CASE("chain consistency: composing transitions reproduces the marginals") {
  const auto table = default_table();
  for (int t = 1; t <= 50; ++t) {
    const auto& tr = table.transition(t);
    CHECK(tr.var >= 0.0);
    CHECK(rel_err(tr.a * table.mean_x0(t - 1), table.mean_x0(t)) < 1e-10);
    CHECK(rel_err(tr.a * table.mean_y(t - 1) + tr.b, table.mean_y(t)) < 1e-10);
    CHECK(rel_err(tr.a * tr.a * table.delta_bar(t - 1) + tr.var, table.delta_bar(t)) < 1e-10);
  }
}

TEST_CASE("posterior consistency against a bivariate Gaussian oracle") {
  const auto table = default_table();
  const Ref ref;
  const double x0 = 0.37, y = -0.81, x_t_offset = 0.23;
  for (int t = 2; t <= 50; ++t) {
    // Oracle: joint of (x_{t-1}, x_t) given (x0, y) with the Markov
    // transition coefficient a = sqrt(alpha_t)(1 - m_t)/(1 - m_{t-1}).
    const long double alpha = ref.ab[t] / ref.ab[t - 1];
    const long double a = std::sqrt(alpha) * (1 - ref.m[t]) / (1 - ref.m[t - 1]);
    const long double mu_prev = std::sqrt(ref.ab[t - 1]) * ((1 - ref.m[t - 1]) * x0 + ref.m[t - 1] * y);
    const long double mu_t = std::sqrt(ref.ab[t]) * ((1 - ref.m[t]) * x0 + ref.m[t] * y);
    const long double cov = a * ref.delta[t - 1];
    const long double x_t = mu_t + x_t_offset;
    const long double mean = mu_prev + cov / ref.delta[t] * (x_t - mu_t);
    const long double var = ref.delta[t - 1] - cov * cov / ref.delta[t];

    // Exact target for this x_t: (x_t - sqrt(ab) x0) / normalizer.
    const double eps_hat = double((x_t - std::sqrt(ref.ab[t]) * x0) / std::sqrt(1 - ref.ab[t]));
    const auto& c = table.reverse(t);
    const double got = c.c_xt * double(x_t) + c.c_yt * y + c.c_eps * eps_hat;
    CHECK(rel_err(got, double(mean)) < 1e-10);
    CHECK(rel_err(c.posterior_var, double(var)) < 1e-10);
  }
}

TEST_CASE("posterior variance follows the closed form") {
  const auto table = default_table();
  for (int t = 2; t <= 50; ++t) {
    const double ratio = (1 - table.m(t)) / (1 - table.m(t - 1));
    const double dp = table.delta_bar(t - 1);
    const double want = dp - ratio * ratio * table.alpha(t) * dp * dp / table.delta_bar(t);
    CHECK(rel_err(table.posterior_var(t), want) < 1e-10);
    CHECK(table.posterior_var(t) >= 0.0);
  }
}

TEST_CASE("t = 1 collapses onto x0") {
  const auto table = default_table();
  const auto& c = table.reverse(1);
  CHECK(c.posterior_var == 0.0);
  CHECK(c.c_yt == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("vanilla kind forces m = 0") {
  ScheduleConfig cfg;
  cfg.kind = ProcessKind::vanilla;
  const auto table = ScheduleTable::build(cfg);
  for (int t = 0; t <= 50; ++t) {
    CHECK(table.m(t) == 0.0);
    CHECK(table.mean_y(t) == 0.0);
  }
  CHECK(rel_err(table.delta_bar(50), 1 - table.alpha_bar(50)) < 1e-12);
}

TEST_CASE("anneal ratios") {
  const auto r = anneal_ratios(5, 0.1);
  REQUIRE(r.size() == 5);
  const double want[] = {0.1, 0.08, 0.06, 0.04, 0.02};
  for (int k = 0; k < 5; ++k) CHECK(r[std::size_t(k)] == want[k]);
  CHECK(anneal_ratios(0, 0.1).empty());
  CHECK(anneal_ratios(1, 0.2) == std::vector<double>{0.2});
  CHECK_THROWS_AS(anneal_ratios(-1, 0.1), std::invalid_argument);
}

TEST_CASE("config validation names the field") {
  ScheduleConfig cfg;
  cfg.beta_start = 0.5;
  cfg.beta_end = 0.1;
  CHECK_THROWS_WITH_AS(ScheduleTable::build(cfg), doctest::Contains("beta"), std::invalid_argument);
  cfg = ScheduleConfig{};
  cfg.num_steps = 1;
  CHECK_THROWS_WITH_AS(ScheduleTable::build(cfg), doctest::Contains("num_steps"), std::invalid_argument);
  cfg = ScheduleConfig{};
  cfg.t0 = 60;
  CHECK_THROWS_AS(ScheduleTable::build(cfg), std::invalid_argument);
}

TEST_CASE("reverse coefficient range checks") {
  const auto table = default_table();
  CHECK_THROWS_AS(derive_reverse_coeffs(table, 0), std::out_of_range);
  CHECK_THROWS_AS(derive_reverse_coeffs(table, 51), std::out_of_range);
  CHECK_THROWS_AS(table.normalizer(0), std::out_of_range);
}

TEST_CASE("csv dump") {
  const auto table = default_table();
  std::ostringstream out;
  table.write_csv(out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,beta,alpha_bar,m,delta_bar,posterior_var");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 50);
}

}
