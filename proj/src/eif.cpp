#include "sepiv/eif.hpp"

#include <algorithm>
#include <cmath>

namespace sepiv {

namespace {

VectorXd prefix_sums(const VectorXd& v) {
  VectorXd c(v.size());
  double s = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) c[k] = (s += v[k]);
  return c;
}

}  // namespace

double OutcomeTransform::dot(const VectorXd& v, const VectorXd&, const OutcomeGrid& grid) const {
  double s = 0.0;
  for (int k = 0; k < grid.size(); ++k) s += v[k] * (*this)(grid.points[k]);
  return s;
}

VectorXd OutcomeTransform::on_grid(const OutcomeGrid& grid) const {
  VectorXd g(grid.size());
  for (int k = 0; k < grid.size(); ++k) g[k] = (*this)(grid.points[k]);
  return g;
}

double ThresholdTransform::dot(const VectorXd&, const VectorXd& prefix, const OutcomeGrid& grid) const {
  const double* b = grid.points.data();
  const auto below = std::upper_bound(b, b + grid.size(), cut_) - b;  // points <= cut
  const double total = prefix[grid.size() - 1];
  const double head = below > 0 ? prefix[below - 1] : 0.0;
  return head - q_ * total;
}

CounterfactualLaw counterfactual_law(const LocalTheta& theta, const OddsPair& odds, const OutcomeGrid& grid) {
  CounterfactualLaw law;
  const int m = grid.size();
  const std::array<double, 2> pz = {1 - theta.p_z1, theta.p_z1};
  law.marg_y0 = VectorXd::Zero(m);
  for (std::size_t z = 0; z < 2; ++z) {
    const VectorXd ab = odds.beta[z] * odds.alpha;
    const VectorXd& f = theta.f_y[z];
    const double norm = grid.integrate((ab.array() + 1.0).matrix().cwiseProduct(f));
    law.joint[0][z] = f * (pz[z] / norm);
    law.joint[1][z] = ab.cwiseProduct(f) * (pz[z] / norm);
    law.marg_y0 += law.joint[0][z] + law.joint[1][z];
  }
  law.mass = grid.integrate(law.marg_y0);
  if (std::abs(law.mass - 1.0) > 1e-6)
    fail(ErrorCode::NormalizationFailure, "counterfactual joint has mass " + std::to_string(law.mass));
  const double p1 = theta.p_z1, p0 = 1 - p1;
  const double b0 = odds.beta[0], b1 = odds.beta[1];
  law.p_z1_treated.resize(m);
  for (int k = 0; k < m; ++k) {
    const double a = odds.alpha[k];
    law.p_z1_treated[k] = (1 + a * b0) * b1 * p1 / (b1 * p1 + b0 * p0 + a * b0 * b1);
  }
  return law;
}

double mu_star(int z, const VectorXd& g_on_grid, const LocalTheta& theta, const OddsPair& odds,
               const OutcomeGrid& grid) {
  const VectorXd af = odds.alpha.cwiseProduct(theta.f_y[static_cast<std::size_t>(z)]);
  return grid.integrate(af.cwiseProduct(g_on_grid)) / grid.integrate(af);
}

LocalEif::LocalEif(const LocalTheta& theta, const OddsPair& odds, const OutcomeGrid& grid)
    : grid_(&grid), odds_(odds), law_(counterfactual_law(theta, odds, grid)), p1_(theta.p_z1) {
  const int m = grid.size();
  for (std::size_t z = 0; z < 2; ++z) {
    const VectorXd af = grid.weights.cwiseProduct(odds.alpha).cwiseProduct(theta.f_y[z]);
    w_mu_[z] = af / af.sum();
    w_mu_alpha_[z] = w_mu_[z].cwiseProduct(odds.alpha);
    mu_alpha_[z] = w_mu_alpha_[z].sum();
  }
  // equal baseline odds make the (B, C) system singular; report that first
  solve_from(Functionals{});
  VectorXd shift(m);
  for (int k = 0; k < m; ++k) {
    shift[k] = treated_shift(odds.alpha[k]);
    if (!(std::abs(shift[k]) >= 1e-10))
      fail(ErrorCode::DivisionGuard, "treated instrument probability equals P(Z=1|x) at y=" +
                                         std::to_string(grid.points[k]));
  }
  const VectorXd& frak = law_.p_z1_treated;
  const VectorXd wm = grid.weights.cwiseProduct(law_.marg_y0);
  w_mean_L_ = wm.cwiseQuotient(shift);
  mean_L_B_ = w_mean_L_.dot(frak);
  mean_L_C_ = w_mean_L_.sum();
  c_mean_L_ = prefix_sums(w_mean_L_);
  for (std::size_t z = 0; z < 2; ++z) {
    w_mu_L_[z] = w_mu_[z].cwiseQuotient(shift);
    mu_L_B_[z] = w_mu_L_[z].dot(frak);
    mu_L_C_[z] = w_mu_L_[z].sum();
    c_mu_[z] = prefix_sums(w_mu_[z]);
    c_mu_alpha_[z] = prefix_sums(w_mu_alpha_[z]);
    c_mu_L_[z] = prefix_sums(w_mu_L_[z]);
  }
}

double LocalEif::treated_shift(double alpha_y) const {
  // closed form of frak_p1 - p1, free of cancellation
  const double p1 = p1_, p0 = 1 - p1_;
  const double b0 = odds_.beta[0], b1 = odds_.beta[1];
  return (b1 - b0) * p1 * p0 / (b1 * p1 + b0 * p0 + alpha_y * b0 * b1);
}

double LocalEif::L_at(double g_y, double alpha_y, const OmegaParts& parts) const {
  const double shift = treated_shift(alpha_y);
  return (g_y + (p1_ + shift) * parts.B + parts.C) / shift;
}

double LocalEif::alpha_at(double y) const {
  const OutcomeGrid& g = *grid_;
  if (g.kind == GridKind::discrete) {
    const int k = g.find(y);
    if (k >= 0) return odds_.alpha[k];
  }
  return g.interpolate(odds_.alpha, y);
}

LocalEif::Functionals LocalEif::functionals(const OutcomeTransform& G) const {
  Functionals f{};
  for (std::size_t z = 0; z < 2; ++z) {
    f.mu_G[z] = G.dot(w_mu_[z], c_mu_[z], *grid_);
    f.mu_aG[z] = G.dot(w_mu_alpha_[z], c_mu_alpha_[z], *grid_);
    f.mu_LG[z] = G.dot(w_mu_L_[z], c_mu_L_[z], *grid_);
  }
  f.mean_LG = G.dot(w_mean_L_, c_mean_L_, *grid_);
  return f;
}

BCSolution LocalEif::solve_from(const Functionals& f) const {
  const double p1 = p1_, p0 = 1 - p1_;
  const double b0 = odds_.beta[0], b1 = odds_.beta[1];
  const double ma0 = mu_alpha_[0], ma1 = mu_alpha_[1];
  const double a11 = b1 * p1 + b0 * b1 * p1 * ma0;
  const double a12 = b1 * p1 + 2 * b0 * p0 - b1 * p0 + b0 * b1 * ma0;
  const double a21 = p1 + b1 * p1 * ma1;
  const double a22 = 1 + b1 * ma1;
  const double r1 = -(b1 * p1 * f.mu_G[0] + 2 * b0 * p0 * f.mu_G[0] - b1 * p0 * f.mu_G[0] + b0 * b1 * f.mu_aG[0]);
  const double r2 = -(f.mu_G[1] + b1 * f.mu_aG[1]);
  BCSolution s;
  s.det = a11 * a22 - a12 * a21;
  s.det_closed_form = 2 * p1 * p0 * (1 + b1 * ma1) * (b1 - b0);
  const double scale = (std::abs(a11) + std::abs(a12)) * (std::abs(a21) + std::abs(a22));
  if (!(std::abs(s.det) >= 1e-12 * scale))
    fail(ErrorCode::SingularSystem, "2x2 system for (B, C) is singular (det " + std::to_string(s.det) + ")");
  s.B = (a22 * r1 - a12 * r2) / s.det;
  s.C = (-a21 * r1 + a11 * r2) / s.det;
  return s;
}

BCSolution LocalEif::solve_bc(const OutcomeTransform& G) const { return solve_from(functionals(G)); }

OmegaParts LocalEif::omega_parts(const OutcomeTransform& G, bool tabulate_L) const {
  const Functionals f = functionals(G);
  const BCSolution bc = solve_from(f);
  OmegaParts parts;
  parts.B = bc.B;
  parts.C = bc.C;
  parts.p1 = p1_;
  parts.mean_L = f.mean_LG + bc.B * mean_L_B_ + bc.C * mean_L_C_;
  for (std::size_t z = 0; z < 2; ++z) {
    parts.mu_G[z] = f.mu_G[z];
    parts.mu_L[z] = f.mu_LG[z] + bc.B * mu_L_B_[z] + bc.C * mu_L_C_[z];
    parts.mu_omega[z] = (static_cast<double>(z) - p1_) * (parts.mu_L[z] - parts.mean_L);
  }
  if (!tabulate_L) return parts;
  const int m = grid_->size();
  parts.L.resize(m);
  for (int k = 0; k < m; ++k) parts.L[k] = L_at(G(grid_->points[k]), odds_.alpha[k], parts);
  return parts;
}

double LocalEif::phi(int a, int z, double y, const OutcomeTransform& G, const OmegaParts& parts) const {
  const auto zi = static_cast<std::size_t>(z);
  const double g_y = G(y);
  const double mu_g = parts.mu_G[zi];
  const double mu_om = parts.mu_omega[zi];
  if (a == 1) return g_y - mu_g + mu_om;
  const double alpha_y = alpha_at(y);
  const double ab = alpha_y * odds_.beta[zi];
  const double om = omega_value(L_at(g_y, alpha_y, parts), z, parts);
  return -ab * (g_y - mu_g) + ab * (om - mu_om) + om;
}

BCSolution solve_BC(const OutcomeTransform& G, const LocalTheta& theta, const OddsPair& odds,
                    const OutcomeGrid& grid) {
  return LocalEif(theta, odds, grid).solve_bc(G);
}

double omega_star(double y, int z, const LocalEif& local, const OutcomeTransform& G, const OmegaParts& parts) {
  return omega_value(local.L_at(G(y), local.alpha_at(y), parts), z, parts);
}

double eif_phi(const ObservedRow& row, const OutcomeTransform& G, const LocalEif& local, const OmegaParts& parts) {
  return local.phi(row.a, row.z, row.y, G, parts);
}

}  // namespace sepiv
