#include <cmath>

#include "../oracle/toy_checks.hpp"
#include "doctest.h"
#include "sepiv/dgp.hpp"
#include "sepiv/diagnostics.hpp"

using namespace sepiv;

namespace {

std::shared_ptr<TabulatedTheta> tabulated(std::array<double, 2> p_a, VectorXd f0, VectorXd f1,
                                          const OutcomeGrid& grid) {
  LocalTheta t;
  t.p_z1 = 0.5;
  t.p_a = p_a;
  t.f_y = {std::move(f0), std::move(f1)};
  return std::make_shared<TabulatedTheta>(grid, t);
}

Dataset duplicated(const Dataset& d) {
  std::vector<std::size_t> idx;
  for (int rep = 0; rep < 2; ++rep)
    for (std::size_t i = 0; i < d.size(); ++i) idx.push_back(i);
  return d.subset(idx);
}

}  // namespace

TEST_CASE("direct check: separable laws never violate") {
  const std::vector<std::vector<double>> probe = {{}};
  const auto toy = toy_oracle::enumerate({});
  const TabulatedTheta t(toy_oracle::binary_grid(), toy_oracle::to_theta(toy));
  CHECK(falsify_direct(t, probe).violations.empty());
  for (const auto& p : toy_oracle::random_params(100, 7)) {
    const auto L = toy_oracle::enumerate(p);
    const TabulatedTheta th(toy_oracle::binary_grid(), toy_oracle::to_theta(L));
    const auto r = falsify_direct(th, probe, 1e-12);
    CHECK(r.violations.empty());
    CHECK(r.skipped_probes.empty());
  }
}

TEST_CASE("direct check: hand-built violating law") {
  const auto grid = make_discrete_grid({0, 1});
  // P(A=0 | Z=1) = 0.4 < P(A=0 | Z=0) = 0.7, yet
  // P(Y=1, A=0 | Z=1) = 0.36 > P(Y=1, A=0 | Z=0) = 0.35
  const auto t = tabulated({0.3, 0.6}, (VectorXd(2) << 0.5, 0.5).finished(), (VectorXd(2) << 0.1, 0.9).finished(),
                           grid);
  const auto r = falsify_direct(*t, {{}});
  REQUIRE(r.violations.size() == 1);
  CHECK(r.violations[0].y == 1.0);
  CHECK(r.violations[0].ratio == doctest::Approx((0.36 - 0.35) / (0.4 - 0.7)));
  CHECK(r.violations[0].ratio < 0);
  const auto js = falsification_to_json(r);
  CHECK(js.find("\"violations\"") != std::string::npos);
}

TEST_CASE("direct check: identical outcome laws give ratio f_y") {
  const auto grid = make_discrete_grid({0, 1, 2});
  const VectorXd f = (VectorXd(3) << 0.2, 0.5, 0.3).finished();
  const auto t = tabulated({0.3, 0.25}, f, f, grid);
  const auto r = falsify_direct(*t, {{}});
  CHECK(r.violations.empty());
  // too weak at the probe: skipped
  const auto weak = tabulated({0.3, 0.305}, f, f, grid);
  const auto s = falsify_direct(*weak, {{}}, 0.02);
  CHECK(s.skipped_probes.size() == 1);
}

TEST_CASE("KS test basic contract") {
  const auto sim = simulate_binary(600, 12);
  RunConfig cfg;
  KsOptions opt;
  opt.b_reps = 50;
  const auto r = falsify_ks(sim.data, cfg, opt);
  CHECK(r.p_value >= 0.0);
  CHECK(r.p_value <= 1.0);
  CHECK(r.rejected == (r.t_stat > r.crit_value));
  CHECK(r.n_functions > 1);
  opt.g_class = TestClass::constant;
  const auto c = falsify_ks(sim.data, cfg, opt);
  CHECK(c.n_functions == 1);
  CHECK(std::isfinite(c.t_stat));
  CHECK(c.rejected == (c.t_stat > c.crit_value));
}

TEST_CASE("KS normalized mean is invariant to duplicating the sample") {
  const auto sim = simulate_binary(500, 21);
  RunConfig cfg;
  KsOptions opt;
  opt.b_reps = 20;
  const auto a = falsify_ks(sim.data, cfg, opt);
  const auto b = falsify_ks(duplicated(sim.data), cfg, opt);
  CHECK(b.min_normalized_mean == doctest::Approx(a.min_normalized_mean).epsilon(1e-7));
  CHECK(b.t_stat == doctest::Approx(std::sqrt(2.0) * a.t_stat).epsilon(1e-7));
}

TEST_CASE("KS weights are finite and vanish for treated rows") {
  const auto sim = simulate_binary(800, 2);
  RunConfig cfg;
  std::size_t guarded = 0;
  const auto w = ks_weights(sim.data, cfg, &guarded);
  CHECK(w.size() == sim.data.size());
  for (double v : w) CHECK(std::isfinite(v));
  for (std::size_t i = 0; i < w.size(); ++i)
    if (sim.data.a(i) == 1) CHECK(w[i] == 0.0);
}

TEST_CASE("wald p-value is monotone in the standardized moment") {
  double last = 1.0 + 1e-12;
  for (double t = 0; t < 6; t += 0.25) {
    const double p = wald_pvalue(t, 1.0);
    CHECK(p <= last);
    CHECK(wald_pvalue(-t, 1.0) == doctest::Approx(p));
    last = p;
  }
  CHECK(wald_pvalue(1.959963984540054, 1.0) == doctest::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("QTT profile p-values follow |rho / se| along a candidate sweep") {
  const auto sim = simulate_null_effect(600, 3);
  RunConfig cfg;
  cfg.k_folds = 2;
  const QttProfile prof(sim.data, cfg);
  std::vector<std::pair<double, double>> pts;
  for (double tq = -1.5; tq <= 1.5; tq += 0.25) {
    const auto pt = prof.evaluate(tq, 0.0, 0.5);
    CHECK(pt.p == doctest::Approx(wald_pvalue(pt.rho, pt.se)));
    pts.emplace_back(std::abs(pt.rho / pt.se), pt.p);
  }
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = 1; i < pts.size(); ++i) CHECK(pts[i].second <= pts[i - 1].second + 1e-15);
  const double adj = prof.adjusted_p(0.0, {-0.1, 0.0, 0.1}, 0.5, 0.001);
  CHECK(adj >= prof.evaluate(0.0, 0.0, 0.5).p + 0.001 - 1e-15);
  CHECK(adj <= 1.0);
}

TEST_CASE("qtt_ci validates its levels and returns an ordered interval") {
  const auto sim = simulate_null_effect(500, 9);
  RunConfig cfg;
  cfg.k_folds = 2;
  QttOptions opt;
  opt.boot_reps = 100;
  opt.n_candidates = 21;
  opt.n_inner = 5;
  opt.c1 = opt.c;
  CHECK_THROWS_AS(qtt_ci(sim.data, cfg, opt), Error);
  opt.c1 = 0.001;
  opt.q = 1.0;
  CHECK_THROWS_AS(qtt_ci(sim.data, cfg, opt), Error);
  opt.q = 0.5;
  const auto r = qtt_ci(sim.data, cfg, opt);
  CHECK(r.candidates.size() == 21);
  CHECK(r.pbar.size() == 21);
  CHECK(r.resolution > 0);
  CHECK(r.tau1_ci[0] <= r.tau1_hat);
  CHECK(r.tau1_hat <= r.tau1_ci[1]);
  if (!r.empty) CHECK(r.interval[0] <= r.interval[1]);
  CHECK(qtt_to_json(r).find("\"interval\"") != std::string::npos);
}

TEST_CASE("treated quantile bootstrap is reproducible") {
  const auto sim = simulate_continuous(400, 1);
  const auto a = treated_quantile_ci(sim.data, 0.5, 0.01, 200, 5);
  const auto b = treated_quantile_ci(sim.data, 0.5, 0.01, 200, 5);
  CHECK(a == b);
  CHECK(a[0] < a[1]);
}
