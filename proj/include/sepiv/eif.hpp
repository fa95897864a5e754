#pragma once

#include <memory>

#include "sepiv/fixedpoint.hpp"

namespace sepiv {

// Bounded outcome transform whose treated-group mean contrast is the target.
class OutcomeTransform {
 public:
  virtual ~OutcomeTransform() = default;
  virtual double operator()(double y) const = 0;
  // sum_k v[k] * G(points[k]); `prefix` holds the running sums of v
  virtual double dot(const VectorXd& v, const VectorXd& prefix, const OutcomeGrid& grid) const;
  VectorXd on_grid(const OutcomeGrid& grid) const;
};

class IdentityTransform : public OutcomeTransform {
 public:
  double operator()(double y) const override { return y; }
};

// G(y) = 1{y <= cut} - q, evaluated in O(log m) from prefix sums.
class ThresholdTransform : public OutcomeTransform {
 public:
  ThresholdTransform(double cut, double q) : cut_(cut), q_(q) {}
  double operator()(double y) const override { return (y <= cut_ ? 1.0 : 0.0) - q_; }
  double dot(const VectorXd& v, const VectorXd& prefix, const OutcomeGrid& grid) const override;

 private:
  double cut_;
  double q_;
};

class FunctionTransform : public OutcomeTransform {
 public:
  explicit FunctionTransform(std::function<double(double)> f) : f_(std::move(f)) {}
  double operator()(double y) const override { return f_(y); }

 private:
  std::function<double(double)> f_;
};

struct CounterfactualLaw {
  std::array<std::array<VectorXd, 2>, 2> joint;  // [a][z]: f(Y0=y, A=a, Z=z | x) on the grid
  VectorXd marg_y0;                             // f(Y0=y | x)
  VectorXd p_z1_treated;                        // f(Z=1 | A=1, Y0=y, x)
  double mass = 0.0;
};

// NormalizationFailure if the joint mass is off by more than 1e-6.
CounterfactualLaw counterfactual_law(const LocalTheta& theta, const OddsPair& odds, const OutcomeGrid& grid);

// E[G alpha | A=0, z] / E[alpha | A=0, z] = E[G(Y0) | A=1, Z=z]
double mu_star(int z, const VectorXd& g_on_grid, const LocalTheta& theta, const OddsPair& odds,
               const OutcomeGrid& grid);

struct BCSolution {
  double B = 0.0;
  double C = 0.0;
  double det = 0.0;              // cofactor determinant of the 2x2 system
  double det_closed_form = 0.0;  // 2 p1 p0 (1 + beta1 mu1(alpha)) (beta1 - beta0)
};

struct OmegaParts {
  double B = 0.0;
  double C = 0.0;
  double p1 = 0.5;                   // P(Z=1 | x)
  VectorXd L;                        // on the grid (may be left empty)
  double mean_L = 0.0;               // E[L(Y0) | x]
  std::array<double, 2> mu_L{};      // E[L(Y0) | A=1, Z=z, x]
  std::array<double, 2> mu_omega{};  // E[omega(Y0, z) | A=1, Z=z, x]
  std::array<double, 2> mu_G{};      // E[G(Y0) | A=1, Z=z, x]
};

// omega(y, z) = (L(y) - E L) (z - p1)
inline double omega_value(double L_y, int z, const OmegaParts& parts) {
  return (L_y - parts.mean_L) * (z - parts.p1);
}

// Per-x precomputation shared by every transform: quadrature weight vectors
// that turn the transform's grid values into the handful of linear
// functionals the influence function needs.
class LocalEif {
 public:
  // DivisionGuard if f(Z=1 | A=1, Y0, x) comes within 1e-10 of P(Z=1 | x).
  LocalEif(const LocalTheta& theta, const OddsPair& odds, const OutcomeGrid& grid);

  const OutcomeGrid& grid() const { return *grid_; }
  const OddsPair& odds() const { return odds_; }
  const CounterfactualLaw& law() const { return law_; }
  double p1() const { return p1_; }

  // SingularSystem if |det| is below 1e-12 times the row-norm product.
  BCSolution solve_bc(const OutcomeTransform& G) const;
  // tabulate_L=false skips the O(m) grid table of L (only phi is needed then)
  OmegaParts omega_parts(const OutcomeTransform& G, bool tabulate_L = true) const;

  // f(Z=1|A=1,Y0=y) - p1 at an arbitrary odds-ratio value
  double treated_shift(double alpha_y) const;
  double L_at(double g_y, double alpha_y, const OmegaParts& parts) const;

  // Odds ratio at an observed outcome: exact on discrete grids, linear
  // interpolation between grid points otherwise.
  double alpha_at(double y) const;

  // Uncentered influence value for one observation.
  double phi(int a, int z, double y, const OutcomeTransform& G, const OmegaParts& parts) const;

 private:
  struct Functionals {
    std::array<double, 2> mu_G, mu_aG, mu_LG;
    double mean_LG;
  };
  Functionals functionals(const OutcomeTransform& G) const;
  BCSolution solve_from(const Functionals& f) const;

  const OutcomeGrid* grid_;
  OddsPair odds_;
  CounterfactualLaw law_;
  double p1_;
  std::array<double, 2> mu_alpha_{};  // E[alpha | A=1, Z=z]
  // weight vectors and their prefix sums
  std::array<VectorXd, 2> w_mu_, w_mu_alpha_, w_mu_L_;
  VectorXd w_mean_L_;
  std::array<VectorXd, 2> c_mu_, c_mu_alpha_, c_mu_L_;
  VectorXd c_mean_L_;
  // G-free parts of E[L] and E[L | A=1, z]: coefficients of B and C
  double mean_L_B_ = 0.0, mean_L_C_ = 0.0;
  std::array<double, 2> mu_L_B_{}, mu_L_C_{};
};

// Single-x conveniences that build a LocalEif on the fly.
BCSolution solve_BC(const OutcomeTransform& G, const LocalTheta& theta, const OddsPair& odds,
                    const OutcomeGrid& grid);
double omega_star(double y, int z, const LocalEif& local, const OutcomeTransform& G, const OmegaParts& parts);
double eif_phi(const ObservedRow& row, const OutcomeTransform& G, const LocalEif& local, const OmegaParts& parts);

}  // namespace sepiv
