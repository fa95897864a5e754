#pragma once

#include <functional>

#include "sepiv/nuisance.hpp"

namespace sepiv {

struct PsiResult {
  VectorXd values;
  int negative = 0;  // coordinates that came out below zero before flooring
};

// The unnormalized map, bounded below by density_floor. g must be nonnegative
// and the relevance guard must already have passed for theta.
PsiResult psi_map(const VectorXd& g, const LocalTheta& theta, const OutcomeGrid& grid, double density_floor);

// psi_map rescaled to unit quadrature mass.
PsiResult psi_map_normalized(const VectorXd& g, const LocalTheta& theta, const OutcomeGrid& grid,
                             double density_floor);

struct FixedPointOptions {
  double tol = 1e-10;
  int max_iter = 10000;
  double density_floor = 1e-6;
  double relevance_tol = 0.02;
};

FixedPointOptions fixed_point_options(const RunConfig& config);

struct GStar {
  VectorXd values;
  int iterations = 0;
  double final_change = 0.0;      // sup-norm step at the last iteration
  double final_divergence = 0.0;  // divergence between the last two iterates
  int negative_psi = 0;           // floored coordinates summed over iterations
};

// Called with (iteration, iterate) for the initial point (iteration 0) and
// after every update.
using IterationObserver = std::function<void(int, const VectorXd&)>;

// Iterates the normalized map from the uniform density (or from `start`,
// rescaled to unit mass) until successive iterates differ by less than tol in
// sup norm. NoConvergence after max_iter steps.
GStar solve_gstar(const LocalTheta& theta, const OutcomeGrid& grid, const FixedPointOptions& opt,
                  const VectorXd* start = nullptr, const IterationObserver& observer = {});

// sup(h/g) / inf(h/g) - 1
double divergence(const VectorXd& h, const VectorXd& g);
inline double divergence(const VectorXd& h, const GStar& g) { return divergence(h, g.values); }

struct OddsPair {
  VectorXd alpha;               // odds ratio on the grid, alpha[0] == 1
  std::array<double, 2> beta{}; // baseline odds per instrument arm
};

// Odds ratio from the fixed point (reference value = first grid point) and
// baseline odds from P(A=1|z) / P(A=0|z) = beta(z) * E[alpha | A=0, z].
OddsPair recover_odds(const GStar& gstar, const LocalTheta& theta, const OutcomeGrid& grid, double density_floor);

// Writes "iteration,divergence" rows for a sequence of iterates against g.
void write_trace_csv(std::ostream& out, const std::vector<VectorXd>& iterates, const VectorXd& g);

}  // namespace sepiv
