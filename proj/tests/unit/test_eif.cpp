#include <cmath>

#include "../oracle/toy_checks.hpp"
#include "doctest.h"
#include "sepiv/eif.hpp"

using namespace sepiv;
using namespace toy_oracle;

namespace {

struct Built {
  Law law;
  OutcomeGrid grid = binary_grid();
  LocalTheta theta;
  OddsPair odds;
};

Built build(const Params& p) {
  Built b;
  b.law = enumerate(p);
  b.theta = to_theta(b.law);
  b.odds.alpha = (VectorXd(2) << 1.0, p.alpha1).finished();
  b.odds.beta = {p.beta0, p.beta1};
  return b;
}

}  // namespace

TEST_CASE("TOY-1: integral equation, B/C identities, determinant") {
  const auto c = eif_checks(enumerate(Params{}));
  CHECK(c.omega_residual < 1e-8);
  CHECK(std::abs(c.identity1a) < 1e-10);
  CHECK(std::abs(c.identity1b) < 1e-10);
  CHECK(std::abs(c.identity2) < 1e-10);
  CHECK(std::abs(c.det_lib - c.det_closed) < 1e-10);
  CHECK(std::abs(c.det_cofactor - c.det_closed) < 1e-10);
}

TEST_CASE("TOY-1: influence function is centered at E(A) tau") {
  const auto c = eif_checks(enumerate(Params{}));
  CHECK(std::abs(c.mean_phi - c.target) < 1e-8);
  CHECK(forms_spread(c.exact, enumerate(Params{}).att) < 1e-10);
  CHECK(forms_spread(c.fitted, enumerate(Params{}).att) < 1e-10);
}

TEST_CASE("same checks across random binary laws") {
  for (const auto& p : random_params(100, 99)) {
    const auto L = enumerate(p);
    const auto c = eif_checks(L);
    CHECK(c.omega_residual < 1e-8);
    CHECK(std::abs(c.identity1a) < 1e-8);
    CHECK(std::abs(c.identity2) < 1e-8);
    CHECK(std::abs(c.det_lib - c.det_closed) < 1e-8 * (1 + std::abs(c.det_closed)));
    CHECK(std::abs(c.mean_phi - c.target) < 1e-8);
    CHECK(forms_spread(c.exact, L.att) < 1e-10);
  }
}

TEST_CASE("counterfactual law and treated means") {
  const auto b = build(Params{});
  const auto law = counterfactual_law(b.theta, b.odds, b.grid);
  CHECK(law.mass == doctest::Approx(1.0).epsilon(1e-12));
  for (int y = 0; y < 2; ++y) {
    CHECK(law.marg_y0[y] == doctest::Approx(b.law.f_y0[y]).epsilon(1e-12));
    CHECK(law.p_z1_treated[y] == doctest::Approx(b.law.p_z1_treated[y]).epsilon(1e-12));
    for (int a = 0; a < 2; ++a)
      for (int z = 0; z < 2; ++z) CHECK(law.joint[a][z][y] == doctest::Approx(b.law.full[y][a][z]).epsilon(1e-12));
  }
  const IdentityTransform G;
  const auto gv = G.on_grid(b.grid);
  for (int z = 0; z < 2; ++z) CHECK(mu_star(z, gv, b.theta, b.odds, b.grid) == doctest::Approx(b.law.mu[z]));
}

TEST_CASE("threshold transform: fast dot equals the generic sum and centering holds") {
  const auto grid = make_continuous_grid(-2, 2, 41);
  VectorXd v(41), prefix(41);
  double run = 0;
  for (int k = 0; k < 41; ++k) {
    v[k] = std::sin(0.3 * k) + 1.5;
    run += v[k];
    prefix[k] = run;
  }
  for (double cut : {-5.0, -2.0, -0.05, 0.0, 0.7, 2.0, 9.0}) {
    const ThresholdTransform T(cut, 0.3);
    const FunctionTransform F([&](double y) { return T(y); });
    CHECK(T.dot(v, prefix, grid) == doctest::Approx(F.dot(v, prefix, grid)).epsilon(1e-12));
  }

  // E[phi_G] = E(A) (E[G(Y1) | A=1] - E[G(Y0) | A=1]) for G = 1{y <= 0} - q
  const auto b = build(Params{});
  const LocalEif local(b.theta, b.odds, b.grid);
  const double q = 0.4;
  const ThresholdTransform G(0.0, q);
  const auto parts = local.omega_parts(G, false);
  const double e_phi = expect(b.law, [&](int y, int a, int z) { return local.phi(a, z, y, G, parts); });
  const double g1 = (1 - b.law.p.py1) - q;        // E[G(Y1) | A=1]
  const double g0 = (1 - b.law.y0_treated) - q;   // E[G(Y0) | A=1]
  CHECK(e_phi == doctest::Approx(b.law.p_treated * (g1 - g0)).epsilon(1e-10));
}

TEST_CASE("library determinant matches its closed form on a continuous grid") {
  const auto grid = make_continuous_grid(-3, 3, 31);
  LocalTheta t;
  t.p_z1 = 0.35;
  t.p_a = {0.2, 0.55};
  VectorXd a(31), b(31);
  for (int k = 0; k < 31; ++k) {
    const double y = grid.points[k];
    a[k] = std::exp(-0.5 * y * y);
    b[k] = std::exp(-0.5 * (y - 0.3) * (y - 0.3));
  }
  t.f_y = {a / grid.integrate(a), b / grid.integrate(b)};
  const auto opt = exact_options();
  const auto gs = solve_gstar(t, grid, opt);
  const auto odds = recover_odds(gs, t, grid, opt.density_floor);
  const LocalEif local(t, odds, grid);
  const auto bc = local.solve_bc(IdentityTransform{});
  CHECK(bc.det == doctest::Approx(bc.det_closed_form).epsilon(1e-10));
  CHECK(bc.det != 0.0);
}

TEST_CASE("omega is doubly centered") {
  const auto b = build(Params{.alpha1 = 0.6, .beta0 = 2.5, .beta1 = 0.4, .py0 = 0.7, .pz1 = 0.3, .py1 = 0.2});
  const LocalEif local(b.theta, b.odds, b.grid);
  const IdentityTransform G;
  const auto parts = local.omega_parts(G, true);
  // E[omega | Y0] = 0 and E[omega | Z] = 0 under the counterfactual law
  for (int y = 0; y < 2; ++y) {
    double s = 0, m = 0;
    for (int z = 0; z < 2; ++z) {
      s += b.law.f_z[z] * omega_value(parts.L[y], z, parts);
      m += b.law.f_z[z];
    }
    CHECK(std::abs(s / m) < 1e-12);
  }
  for (int z = 0; z < 2; ++z) {
    double s = 0;
    for (int y = 0; y < 2; ++y) s += b.law.f_y0[y] * omega_value(parts.L[y], z, parts);
    CHECK(std::abs(s) < 1e-12);
  }
}
