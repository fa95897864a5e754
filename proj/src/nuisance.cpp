#include "sepiv/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sepiv/stats.hpp"

namespace sepiv {

void LocalTheta::check_relevance(double tol) const {
  const double gap = std::abs(p_a[1] - p_a[0]);
  if (gap < tol || gap == 0.0)
    fail(ErrorCode::WeakInstrument, "treatment probabilities differ by " + std::to_string(gap) +
                                        " across instrument arms (tolerance " + std::to_string(tol) + ")");
}

VectorXd density_ratio(const LocalTheta& theta, double relevance_tol) {
  theta.check_relevance(relevance_tol);
  const auto lo = static_cast<std::size_t>(theta.z_min());
  const auto hi = static_cast<std::size_t>(theta.z_max());
  return theta.f_y[hi].cwiseQuotient(theta.f_y[lo]);
}

double clip_probability(double p, double floor) { return std::clamp(p, floor, 1.0 - floor); }

VectorXd clip_density(const VectorXd& raw, const OutcomeGrid& grid, double floor) {
  const double mass = grid.integrate(raw);
  if (!(mass > 0) || !std::isfinite(mass))
    fail(ErrorCode::NormalizationFailure, "density has no positive mass on the outcome grid");
  VectorXd f = raw / mass;
  if (f.minCoeff() >= floor) return f;
  const double keep = 1.0 - floor * grid.measure();
  if (!(keep > 0)) fail(ErrorCode::ConfigError, "density_floor times grid measure must be below 1");
  return (keep * f).array() + floor;
}

LocalTheta NuisanceTheta::at(Covariates x) const {
  LocalTheta t;
  t.p_z1 = f_z(x);
  t.p_a = {f_a(0, x), f_a(1, x)};
  t.f_y = {f_y(0, x), f_y(1, x)};
  return t;
}

// ---- logistic regression ----------------------------------------------------

namespace {

double logistic_loglik(const Eigen::MatrixXd& X, const VectorXd& y, const VectorXd& b, double pen) {
  const VectorXd eta = X * b;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + e^eta) computed stably
    const double e = eta[i];
    const double sp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += y[i] * e - sp;
  }
  return ll - 0.5 * pen * b.squaredNorm();
}

bool newton_logistic(const Eigen::MatrixXd& X, const VectorXd& y, double pen, int max_iter, LogisticFit& out) {
  const Eigen::Index p = X.cols();
  VectorXd b = VectorXd::Zero(p);
  double ll = logistic_loglik(X, y, b, pen);
  for (int it = 1; it <= max_iter; ++it) {
    const VectorXd eta = X * b;
    VectorXd mu(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu[i] = expit(eta[i]);
      w[i] = mu[i] * (1 - mu[i]);
    }
    const VectorXd grad = X.transpose() * (y - mu) - pen * b;
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    H.diagonal().array() += pen;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
    VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) return false;
    double t = 1.0;
    double ll_new = logistic_loglik(X, y, b + step, pen);
    while (ll_new < ll - 1e-12 * std::abs(ll) && t > 1e-8) {
      t /= 2;
      ll_new = logistic_loglik(X, y, b + t * step, pen);
    }
    b += t * step;
    const double change = (t * step).cwiseAbs().maxCoeff();
    ll = ll_new;
    if (change < 1e-9) {
      const VectorXd eta2 = X * b;
      VectorXd w2(eta2.size());
      for (Eigen::Index i = 0; i < eta2.size(); ++i) {
        const double m = expit(eta2[i]);
        w2[i] = m * (1 - m);
      }
      Eigen::MatrixXd I = X.transpose() * w2.asDiagonal() * X;
      I.diagonal().array() += pen;
      out.coef = b;
      out.cov = I.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
      out.iterations = it;
      return true;
    }
  }
  return false;
}

}  // namespace

LogisticFit fit_logistic(const Eigen::MatrixXd& design, const VectorXd& y, double ridge_lambda, int max_iter) {
  LogisticFit fit;
  if (newton_logistic(design, y, 0.0, max_iter, fit)) return fit;
  const double pen = ridge_lambda * static_cast<double>(design.rows());
  if (newton_logistic(design, y, pen, max_iter, fit)) {
    fit.ridge = true;
    return fit;
  }
  fail(ErrorCode::NoConvergence, "logistic regression did not converge, even with the ridge fallback");
}

// ---- multinomial logit ------------------------------------------------------

namespace {

void class_probs(const Eigen::MatrixXd& B, const Eigen::Ref<const VectorXd>& xi, VectorXd& pr) {
  const Eigen::Index k1 = B.rows();
  pr.resize(k1 + 1);
  pr[0] = 0.0;
  pr.tail(k1) = B * xi;
  const double mx = pr.maxCoeff();
  pr = (pr.array() - mx).exp();
  pr /= pr.sum();
}

double multinomial_loglik(const Eigen::MatrixXd& X, const std::vector<int>& cls, const Eigen::MatrixXd& B,
                          double pen) {
  double ll = 0.0;
  VectorXd pr;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    class_probs(B, X.row(i).transpose(), pr);
    ll += std::log(std::max(pr[cls[static_cast<std::size_t>(i)]], 1e-300));
  }
  return ll - 0.5 * pen * B.squaredNorm();
}

bool newton_multinomial(const Eigen::MatrixXd& X, const std::vector<int>& cls, int classes, double pen, int max_iter,
                        MultinomialFit& out) {
  const Eigen::Index p = X.cols();
  const Eigen::Index k1 = classes - 1;
  const Eigen::Index P = k1 * p;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(k1, p);
  double ll = multinomial_loglik(X, cls, B, pen);
  VectorXd pr;
  for (int it = 1; it <= max_iter; ++it) {
    VectorXd grad = VectorXd::Zero(P);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(P, P);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const VectorXd xi = X.row(i).transpose();
      class_probs(B, xi, pr);
      const int c = cls[static_cast<std::size_t>(i)];
      const Eigen::MatrixXd xx = xi * xi.transpose();
      for (Eigen::Index a = 0; a < k1; ++a) {
        const double ya = (c == a + 1) ? 1.0 : 0.0;
        grad.segment(a * p, p) += (ya - pr[a + 1]) * xi;
        for (Eigen::Index b = a; b < k1; ++b) {
          const double wab = pr[a + 1] * ((a == b ? 1.0 : 0.0) - pr[b + 1]);
          H.block(a * p, b * p, p, p) += wab * xx;
        }
      }
    }
    for (Eigen::Index a = 0; a < k1; ++a)
      for (Eigen::Index b = a + 1; b < k1; ++b) H.block(b * p, a * p, p, p) = H.block(a * p, b * p, p, p).transpose();
    // parameters are blocked by class: index a * p + j
    VectorXd bvec(P);
    for (Eigen::Index a = 0; a < k1; ++a) bvec.segment(a * p, p) = B.row(a).transpose();
    grad -= pen * bvec;
    H.diagonal().array() += pen;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
    const VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) return false;
    Eigen::MatrixXd S(k1, p);
    for (Eigen::Index a = 0; a < k1; ++a) S.row(a) = step.segment(a * p, p).transpose();
    double t = 1.0;
    double ll_new = multinomial_loglik(X, cls, B + S, pen);
    while (ll_new < ll - 1e-12 * std::abs(ll) && t > 1e-8) {
      t /= 2;
      ll_new = multinomial_loglik(X, cls, B + t * S, pen);
    }
    B += t * S;
    ll = ll_new;
    if (t * step.cwiseAbs().maxCoeff() < 1e-9) {
      out.coef = B;
      out.iterations = it;
      return true;
    }
  }
  return false;
}

}  // namespace

MultinomialFit fit_multinomial(const Eigen::MatrixXd& design, const std::vector<int>& cls, int classes,
                               double ridge_lambda, int max_iter) {
  MultinomialFit fit;
  if (classes < 2) fail(ErrorCode::InvalidArgument, "multinomial fit needs at least two classes");
  if (newton_multinomial(design, cls, classes, 0.0, max_iter, fit)) return fit;
  const double pen = ridge_lambda * static_cast<double>(design.rows());
  if (newton_multinomial(design, cls, classes, pen, max_iter, fit)) {
    fit.ridge = true;
    return fit;
  }
  fail(ErrorCode::NoConvergence, "multinomial logit did not converge, even with the ridge fallback");
}

// ---- feature maps and component models ----------------------------------------

namespace {

int treatment_width(int d, TreatmentBasis basis) { return 2 + d + (basis == TreatmentBasis::interacted ? d : 0); }

void treatment_features(int z, Covariates x, TreatmentBasis basis, double* out) {
  const std::size_t d = x.size();
  out[0] = 1.0;
  out[1] = z;
  for (std::size_t j = 0; j < d; ++j) out[2 + j] = x[j];
  if (basis == TreatmentBasis::interacted)
    for (std::size_t j = 0; j < d; ++j) out[2 + d + j] = z * x[j];
}

Eigen::MatrixXd intercept_design(const Dataset& data) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(data.size()), data.dim() + 1);
  X.col(0).setOnes();
  if (data.dim() > 0) X.rightCols(data.dim()) = data.xs();
  return X;
}

void require_arms(const Dataset& train, bool need_a) {
  std::size_t z1 = 0, a1 = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    z1 += static_cast<std::size_t>(train.z(i));
    a1 += static_cast<std::size_t>(train.a(i));
  }
  if (z1 == 0 || z1 == train.size()) fail(ErrorCode::EmptyArm, "training sample misses an instrument arm");
  if (need_a && (a1 == 0 || a1 == train.size())) fail(ErrorCode::EmptyArm, "training sample misses a treatment arm");
}

}  // namespace

double InstrumentModel::operator()(Covariates x) const {
  double eta = fit_.coef[0];
  for (std::size_t j = 0; j < x.size(); ++j) eta += fit_.coef[static_cast<Eigen::Index>(j) + 1] * x[j];
  return clip_probability(expit(eta), floor_);
}

double TreatmentModel::operator()(int z, Covariates x) const {
  double f[64];
  std::vector<double> big;
  const int w = treatment_width(static_cast<int>(x.size()), basis_);
  double* buf = f;
  if (w > 64) {
    big.resize(static_cast<std::size_t>(w));
    buf = big.data();
  }
  treatment_features(z, x, basis_, buf);
  double eta = 0.0;
  for (int k = 0; k < w; ++k) eta += fit_.coef[k] * buf[k];
  return clip_probability(expit(eta), floor_);
}

InstrumentModel fit_instrument_model(const Dataset& train, const RunConfig& config) {
  require_arms(train, false);
  VectorXd y(static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) y[static_cast<Eigen::Index>(i)] = train.z(i);
  return {fit_logistic(intercept_design(train), y), config.clip.prob_floor};
}

TreatmentModel fit_treatment_model(const Dataset& train, const RunConfig& config, TreatmentBasis basis) {
  require_arms(train, true);
  const int w = treatment_width(train.dim(), basis);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(train.size()), w);
  VectorXd y(static_cast<Eigen::Index>(train.size()));
  std::vector<double> row(static_cast<std::size_t>(w));
  for (std::size_t i = 0; i < train.size(); ++i) {
    treatment_features(train.z(i), train.x(i), basis, row.data());
    X.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), w);
    y[static_cast<Eigen::Index>(i)] = train.a(i);
  }
  return {fit_logistic(X, y), basis, config.clip.prob_floor};
}

FrequencyTable::FrequencyTable(const OutcomeGrid& grid, const std::vector<double>& ys)
    : pmf_(VectorXd::Zero(grid.size())) {
  for (double y : ys) {
    const int k = grid.find(y);
    if (k < 0) fail(ErrorCode::InvalidArgument, "outcome value not on the discrete grid");
    pmf_[k] += 1.0;
  }
  pmf_ /= static_cast<double>(ys.size());
}

MultinomialOutcome::MultinomialOutcome(const OutcomeGrid& grid, const std::vector<double>& ys, const RowMatrix& xs)
    : m_(grid.size()) {
  // only classes seen in the cell are modelled; the rest get zero raw mass
  std::vector<int> idx(ys.size());
  std::vector<int> seen(static_cast<std::size_t>(m_), 0);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    idx[i] = grid.find(ys[i]);
    if (idx[i] < 0) fail(ErrorCode::InvalidArgument, "outcome value not on the discrete grid");
    seen[static_cast<std::size_t>(idx[i])] = 1;
  }
  std::vector<int> remap(static_cast<std::size_t>(m_), -1);
  for (int k = 0; k < m_; ++k)
    if (seen[static_cast<std::size_t>(k)]) {
      remap[static_cast<std::size_t>(k)] = static_cast<int>(present_.size());
      present_.push_back(k);
    }
  std::vector<int> cls(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) cls[i] = remap[static_cast<std::size_t>(idx[i])];
  Eigen::MatrixXd X(xs.rows(), xs.cols() + 1);
  X.col(0).setOnes();
  X.rightCols(xs.cols()) = xs;
  if (present_.size() >= 2) fit_ = fit_multinomial(X, cls, static_cast<int>(present_.size()));
}

VectorXd MultinomialOutcome::raw_density(Covariates x) const {
  VectorXd out = VectorXd::Zero(m_);
  if (present_.size() < 2) {
    out[present_.front()] = 1.0;
    return out;
  }
  VectorXd xi(static_cast<Eigen::Index>(x.size()) + 1);
  xi[0] = 1.0;
  for (std::size_t j = 0; j < x.size(); ++j) xi[static_cast<Eigen::Index>(j) + 1] = x[j];
  VectorXd pr;
  class_probs(fit_.coef, xi, pr);
  for (std::size_t c = 0; c < present_.size(); ++c) out[present_[c]] = pr[static_cast<Eigen::Index>(c)];
  return out;
}

KernelConditionalDensity::KernelConditionalDensity(const OutcomeGrid& grid, const std::vector<double>& ys,
                                                   const RowMatrix& xs, double bandwidth_scale)
    : xs_(xs) {
  const int d = static_cast<int>(xs.cols());
  const Eigen::Index n = static_cast<Eigen::Index>(ys.size());
  auto positive = [](double h) { return (h > 0 && std::isfinite(h)) ? h : 1.0; };
  h_y_ = positive(bandwidth_scale * silverman_bandwidth(ys, d + 1));
  h_x_.resize(d);
  for (int j = 0; j < d; ++j) {
    std::vector<double> col(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = xs(i, j);
    h_x_[j] = positive(bandwidth_scale * silverman_bandwidth(col, d + 1));
  }
  const double norm = 1.0 / (h_y_ * std::sqrt(2 * std::numbers::pi));
  ky_.resize(grid.size(), n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < grid.size(); ++k) {
      const double u = (grid.points[k] - ys[static_cast<std::size_t>(i)]) / h_y_;
      ky_(k, i) = norm * std::exp(-0.5 * u * u);
    }
}

VectorXd KernelConditionalDensity::raw_density(Covariates x) const {
  const Eigen::Index n = xs_.rows();
  VectorXd logw(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < xs_.cols(); ++j) {
      const double u = (x[static_cast<std::size_t>(j)] - xs_(i, j)) / h_x_[j];
      s += u * u;
    }
    logw[i] = -0.5 * s;
  }
  // shift by the max so that far-away probes still get usable weights
  const VectorXd w = (logw.array() - logw.maxCoeff()).exp();
  return ky_ * (w / w.sum());
}

std::unique_ptr<OutcomeModel> fit_outcome_model(const Dataset& train, int z, const OutcomeGrid& grid,
                                                const RunConfig& config) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.a(i) == 0 && train.z(i) == z) idx.push_back(i);
  if (idx.empty()) fail(ErrorCode::EmptyCell, "no controls with z=" + std::to_string(z) + " in the training sample");
  const Dataset cell = train.subset(idx);
  if (grid.kind == GridKind::discrete) {
    if (cell.dim() == 0) return std::make_unique<FrequencyTable>(grid, cell.ys());
    return std::make_unique<MultinomialOutcome>(grid, cell.ys(), cell.xs());
  }
  return std::make_unique<KernelConditionalDensity>(grid, cell.ys(), cell.xs(), config.bandwidth_scale);
}

namespace {
// outcome quantiles where the instrument tilt stops varying
constexpr double kTiltClamp = 0.05;
}  // namespace

PooledTilt::PooledTilt(const OutcomeGrid& grid, const Dataset& controls, const RunConfig& config)
    : points_(grid.points), kernel_(grid, controls.ys(), controls.xs(), config.bandwidth_scale), floor_(config.clip.prob_floor) {
  const auto& ys = controls.ys();
  lo_ = quantile(ys, kTiltClamp);
  hi_ = quantile(ys, 1 - kTiltClamp);
  center_ = mean(ys);
  const double sd = sample_sd(ys);
  scale_ = sd > 0 && std::isfinite(sd) ? sd : 1.0;
  const int d = controls.dim();
  const int w = width(d);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(controls.size()), w);
  VectorXd target(static_cast<Eigen::Index>(controls.size()));
  std::vector<double> row(static_cast<std::size_t>(w));
  for (std::size_t i = 0; i < controls.size(); ++i) {
    features(controls.y(i), controls.x(i), row.data());
    X.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), w);
    target[static_cast<Eigen::Index>(i)] = controls.z(i);
  }
  fit_ = fit_logistic(X, target);
}

void PooledTilt::features(double y, Covariates x, double* out) const {
  const double t = (std::clamp(y, lo_, hi_) - center_) / scale_;
  const std::size_t d = x.size();
  out[0] = 1.0;
  out[1] = t;
  out[2] = t * t;
  for (std::size_t j = 0; j < d; ++j) {
    out[3 + j] = x[j];
    out[3 + d + j] = t * x[j];
  }
}

VectorXd PooledTilt::arm_probability(int z, Covariates x) const {
  const int w = width(static_cast<int>(x.size()));
  std::vector<double> f(static_cast<std::size_t>(w));
  VectorXd out(points_.size());
  for (Eigen::Index k = 0; k < points_.size(); ++k) {
    features(points_[k], x, f.data());
    double eta = 0.0;
    for (int c = 0; c < w; ++c) eta += fit_.coef[c] * f[static_cast<std::size_t>(c)];
    const double p1 = clip_probability(expit(eta), floor_);
    out[k] = z == 1 ? p1 : 1.0 - p1;
  }
  return out;
}

std::array<std::shared_ptr<OutcomeModel>, 2> fit_outcome_models(const Dataset& train, const OutcomeGrid& grid,
                                                                const RunConfig& config) {
  if (grid.kind == GridKind::discrete || config.outcome_learner == "cell_kernel")
    return {fit_outcome_model(train, 0, grid, config), fit_outcome_model(train, 1, grid, config)};
  std::vector<std::size_t> idx;
  std::array<std::size_t, 2> count{};
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.a(i) == 0) {
      idx.push_back(i);
      ++count[static_cast<std::size_t>(train.z(i))];
    }
  for (int z = 0; z < 2; ++z)
    if (count[static_cast<std::size_t>(z)] == 0)
      fail(ErrorCode::EmptyCell, "no controls with z=" + std::to_string(z) + " in the training sample");
  auto model = std::make_shared<const PooledTilt>(grid, train.subset(idx), config);
  return {std::make_shared<TiltedOutcome>(model, 0), std::make_shared<TiltedOutcome>(model, 1)};
}

FittedTheta::FittedTheta(OutcomeGrid grid, InstrumentModel fz, TreatmentModel fa,
                         std::array<std::shared_ptr<OutcomeModel>, 2> fy, ClipConfig clip)
    : NuisanceTheta(std::move(grid)), fz_(std::move(fz)), fa_(std::move(fa)), fy_(std::move(fy)), clip_(clip) {}

VectorXd FittedTheta::f_y(int z, Covariates x) const {
  return clip_density(fy_[static_cast<std::size_t>(z)]->raw_density(x), grid(), clip_.density_floor);
}

std::shared_ptr<FittedTheta> fit_theta(const Dataset& train, const OutcomeGrid& grid, const RunConfig& config) {
  auto fz = fit_instrument_model(train, config);
  auto fa = fit_treatment_model(train, config);
  auto fy = fit_outcome_models(train, grid, config);
  return std::make_shared<FittedTheta>(grid, std::move(fz), std::move(fa), std::move(fy), config.clip);
}

}  // namespace sepiv
