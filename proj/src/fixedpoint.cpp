#include "sepiv/fixedpoint.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace sepiv {

PsiResult psi_map(const VectorXd& g, const LocalTheta& theta, const OutcomeGrid& grid, double density_floor) {
  const auto lo = static_cast<std::size_t>(theta.z_min());
  const auto hi = static_cast<std::size_t>(theta.z_max());
  const double p_lo = theta.p_a[lo];
  const double p_hi = theta.p_a[hi];
  const VectorXd& f_lo = theta.f_y[lo];
  const VectorXd& f_hi = theta.f_y[hi];
  const VectorXd ratio = f_hi.cwiseQuotient(f_lo);
  const double scale = grid.integrate(g.cwiseProduct(ratio));

  PsiResult out;
  out.values.resize(g.size());
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    const double num = p_lo * g[k] + (1 - p_lo) * f_lo[k] - (1 - p_hi) * f_hi[k];
    const double v = num * scale / (p_hi * ratio[k]);
    if (v < 0) ++out.negative;
    // a lower bound rather than a replacement of negatives only: replacing
    // just v < 0 makes the map jump at zero and can trap a tail cell in a
    // two-cycle between the floor and a tiny positive value
    out.values[k] = std::max(v, density_floor);
  }
  return out;
}

PsiResult psi_map_normalized(const VectorXd& g, const LocalTheta& theta, const OutcomeGrid& grid,
                             double density_floor) {
  PsiResult r = psi_map(g, theta, grid, density_floor);
  const double mass = grid.integrate(r.values);
  if (!(mass > 0) || !std::isfinite(mass))
    fail(ErrorCode::NormalizationFailure, "fixed-point iterate has no positive mass");
  r.values /= mass;
  return r;
}

FixedPointOptions fixed_point_options(const RunConfig& config) {
  return {config.fixed_point.tol, config.fixed_point.max_iter, config.clip.density_floor, config.relevance_tol};
}

GStar solve_gstar(const LocalTheta& theta, const OutcomeGrid& grid, const FixedPointOptions& opt,
                  const VectorXd* start, const IterationObserver& observer) {
  theta.check_relevance(opt.relevance_tol);
  VectorXd h = start ? *start : VectorXd::Ones(grid.size());
  h /= grid.integrate(h);
  if (observer) observer(0, h);
  GStar out;
  for (int it = 1; it <= opt.max_iter; ++it) {
    PsiResult next = psi_map_normalized(h, theta, grid, opt.density_floor);
    out.negative_psi += next.negative;
    const double change = (next.values - h).cwiseAbs().maxCoeff();
    out.final_divergence = divergence(next.values, h);
    h = std::move(next.values);
    if (observer) observer(it, h);
    out.final_change = change;
    if (change < opt.tol) {
      out.values = std::move(h);
      out.iterations = it;
      return out;
    }
  }
  fail(ErrorCode::NoConvergence, "fixed point not reached after " + std::to_string(opt.max_iter) +
                                     " iterations (last change " + std::to_string(out.final_change) +
                                     ", divergence " + std::to_string(out.final_divergence) + ")");
}

double divergence(const VectorXd& h, const VectorXd& g) {
  const VectorXd r = h.cwiseQuotient(g);
  return r.maxCoeff() / r.minCoeff() - 1.0;
}

OddsPair recover_odds(const GStar& gstar, const LocalTheta& theta, const OutcomeGrid& grid, double density_floor) {
  const auto lo = static_cast<std::size_t>(theta.z_min());
  const VectorXd& f_lo = theta.f_y[lo];
  const VectorXd& g = gstar.values;
  OddsPair odds;
  odds.alpha.resize(g.size());
  const double ref = f_lo[0] / std::max(g[0], density_floor);
  for (Eigen::Index k = 0; k < g.size(); ++k) odds.alpha[k] = g[k] * ref / std::max(f_lo[k], density_floor);
  odds.alpha[0] = 1.0;
  for (std::size_t z = 0; z < 2; ++z) {
    const double p = theta.p_a[z];
    const double mean_alpha = grid.integrate(odds.alpha.cwiseProduct(theta.f_y[z]));
    odds.beta[z] = p / (1 - p) / mean_alpha;
  }
  return odds;
}

void write_trace_csv(std::ostream& out, const std::vector<VectorXd>& iterates, const VectorXd& g) {
  out << "iteration,divergence\n";
  for (std::size_t j = 0; j < iterates.size(); ++j) out << j << ',' << divergence(iterates[j], g) << '\n';
}

}  // namespace sepiv
