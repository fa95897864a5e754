#include <cmath>

#include "doctest.h"
#include "sepiv/dgp.hpp"
#include "sepiv/nuisance.hpp"
#include "sepiv/stats.hpp"

using namespace sepiv;

TEST_CASE("clip_density keeps unit mass and the floor") {
  const auto grid = make_continuous_grid(0, 1, 11);
  VectorXd raw(11);
  for (int k = 0; k < 11; ++k) raw[k] = k < 5 ? 0.0 : 3.0;
  const auto f = clip_density(raw, grid, 0.05);
  CHECK(f.minCoeff() >= 0.05 - 1e-15);
  CHECK(grid.integrate(f) == doctest::Approx(1.0).epsilon(1e-12));
  // already above the floor: only normalized
  VectorXd flat = VectorXd::Constant(11, 7.0);
  CHECK((clip_density(flat, grid, 0.05) - VectorXd::Ones(11)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(clip_density(VectorXd::Zero(11), grid, 0.05), Error);
  CHECK(clip_probability(0.0, 0.01) == 0.01);
  CHECK(clip_probability(0.999, 0.01) == 0.99);
  CHECK(clip_probability(0.4, 0.01) == 0.4);
}

TEST_CASE("relevance guard and density ratio") {
  LocalTheta t;
  t.p_a = {0.6, 0.3};
  t.f_y[0] = VectorXd::Constant(2, 0.5);
  t.f_y[1] = (VectorXd(2) << 0.25, 0.75).finished();
  CHECK(t.z_min() == 1);
  CHECK(t.z_max() == 0);
  const auto r = density_ratio(t, 0.02);
  CHECK(r[0] == doctest::Approx(2.0));
  CHECK(r[1] == doctest::Approx(2.0 / 3.0));
  t.p_a = {0.3, 0.31};
  try {
    t.check_relevance(0.02);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WeakInstrument);
  }
  t.p_a = {0.3, 0.3};
  CHECK_THROWS_AS(t.check_relevance(0.0), Error);
}

TEST_CASE("logistic regression recovers coefficients") {
  Rng r(11);
  const int n = 20000;
  Eigen::MatrixXd X(n, 3);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const double x1 = r.normal(), x2 = r.normal();
    X.row(i) << 1.0, x1, x2;
    y[i] = r.bernoulli(expit(0.5 - 1.0 * x1 + 0.25 * x2));
  }
  const auto fit = fit_logistic(X, y);
  CHECK_FALSE(fit.ridge);
  const double truth[] = {0.5, -1.0, 0.25};
  for (int j = 0; j < 3; ++j) {
    const double se = std::sqrt(fit.cov(j, j));
    CHECK(std::abs(fit.coef[j] - truth[j]) < 4 * se);
  }
}

TEST_CASE("logistic regression falls back to ridge under separation") {
  Eigen::MatrixXd X(6, 2);
  VectorXd y(6);
  for (int i = 0; i < 6; ++i) {
    X.row(i) << 1.0, i - 2.5;
    y[i] = i >= 3;
  }
  const auto fit = fit_logistic(X, y);
  CHECK(fit.ridge);
  CHECK(std::isfinite(fit.coef[1]));
  CHECK(fit.coef[1] > 0);
}

TEST_CASE("multinomial logit recovers class probabilities") {
  Rng r(3);
  const int n = 30000;
  Eigen::MatrixXd X(n, 2);
  std::vector<int> cls(n);
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    X.row(i) << 1.0, x;
    const double e1 = std::exp(0.3 + 0.5 * x), e2 = std::exp(-0.2 - 0.7 * x);
    const double u = r.uniform() * (1 + e1 + e2);
    cls[i] = u < 1 ? 0 : (u < 1 + e1 ? 1 : 2);
  }
  const auto fit = fit_multinomial(X, cls, 3);
  CHECK(fit.coef(0, 0) == doctest::Approx(0.3).epsilon(0.1).scale(1));
  CHECK(fit.coef(0, 1) == doctest::Approx(0.5).epsilon(0.1).scale(1));
  CHECK(fit.coef(1, 0) == doctest::Approx(-0.2).epsilon(0.1).scale(1));
  CHECK(fit.coef(1, 1) == doctest::Approx(-0.7).epsilon(0.1).scale(1));
}

TEST_CASE("frequency table is the empirical pmf") {
  const auto grid = make_discrete_grid({0, 1, 2});
  FrequencyTable t(grid, {0, 2, 2, 2});
  const auto f = t.raw_density({});
  CHECK(grid.integrate(f) == doctest::Approx(1.0));
  CHECK(f[0] == doctest::Approx(0.25));
  CHECK(f[1] == doctest::Approx(0.0));
  CHECK(f[2] == doctest::Approx(0.75));
}

TEST_CASE("kernel conditional density integrates to about one") {
  Rng r(8);
  std::vector<double> ys;
  RowMatrix xs(500, 1);
  for (int i = 0; i < 500; ++i) {
    xs(i, 0) = r.normal();
    ys.push_back(xs(i, 0) + r.normal());
  }
  const auto grid = make_continuous_grid(-8, 8, 201);
  KernelConditionalDensity k(grid, ys, xs, 1.0);
  CHECK(k.bandwidth_y() > 0);
  const double x0[] = {0.0};
  const auto f = k.raw_density(x0);
  CHECK(f.minCoeff() >= 0);
  CHECK(grid.integrate(f) == doctest::Approx(1.0).epsilon(0.02));
  // conditional mean near 0 given x = 0
  CHECK(std::abs(grid.integrate(f.cwiseProduct(grid.points))) < 0.3);
}

TEST_CASE("pooled tilt splits the pooled density into the two arms") {
  const auto sim = simulate_continuous(3000, 4);
  std::vector<std::size_t> controls;
  for (std::size_t i = 0; i < sim.data.size(); ++i)
    if (sim.data.a(i) == 0) controls.push_back(i);
  const auto c = sim.data.subset(controls);
  RunConfig cfg;
  const auto grid = make_outcome_grid(sim.data, cfg);
  PooledTilt m(grid, c, cfg);
  const double x[] = {0.2, -0.1, 0.4};
  const auto p0 = m.arm_probability(0, x), p1 = m.arm_probability(1, x);
  CHECK((p0 + p1 - VectorXd::Ones(grid.size())).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(p1.minCoeff() >= cfg.clip.prob_floor);
  CHECK(p1.maxCoeff() <= 1 - cfg.clip.prob_floor);
  // constant beyond the clamped range
  CHECK(p1[0] == doctest::Approx(p1[1]));
  CHECK(p1[grid.size() - 1] == doctest::Approx(p1[grid.size() - 2]));
  CHECK(PooledTilt::width(3) == 9);
}

TEST_CASE("fit_theta on a discrete law recovers the cell frequencies") {
  ToyParams p;
  const auto sim = simulate_toy(40000, p, 2);
  RunConfig cfg;
  const auto grid = make_outcome_grid(sim.data, cfg);
  REQUIRE(grid.kind == GridKind::discrete);
  const auto th = fit_theta(sim.data, grid, cfg);
  const auto loc = th->at({});
  CHECK(loc.p_z1 == doctest::Approx(p.pz1).epsilon(0.03).scale(1));
  // P(A=1 | z) = sum_y f(y) ab/(1+ab)
  for (int z = 0; z < 2; ++z) {
    const double b = z ? p.beta1 : p.beta0;
    const double pa = (1 - p.py0) * b / (1 + b) + p.py0 * p.alpha1 * b / (1 + p.alpha1 * b);
    CHECK(loc.p_a[z] == doctest::Approx(pa).epsilon(0.02).scale(1));
    CHECK(grid.integrate(loc.f_y[z]) == doctest::Approx(1.0));
  }
}

TEST_CASE("fit_theta reports empty cells") {
  const Dataset d({0.1, 0.2, 0.3, 0.4, 0.5}, {0, 1, 1, 0, 1}, {0, 0, 1, 0, 1}, RowMatrix(5, 0));
  RunConfig cfg;
  const auto grid = make_outcome_grid(d, cfg);
  try {
    fit_theta(d, grid, cfg);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyCell);
  }
}
