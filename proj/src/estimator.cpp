#include "sepiv/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "sepiv/parallel.hpp"
#include "sepiv/rng.hpp"
#include "sepiv/stats.hpp"

namespace sepiv {

std::string result_to_json(const EstimateResult& r, const std::optional<double>& truth) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["tau_hat"] = r.tau_hat;
  j["se"] = r.se;
  j["ci"] = {r.ci[0], r.ci[1]};
  j["level"] = r.level;
  j["n"] = r.n;
  j["k_folds"] = r.k_folds;
  j["seed"] = r.seed;
  j["flags"] = r.flags;
  if (truth) {
    j["truth"] = *truth;
    j["bias"] = r.tau_hat - *truth;
  }
  auto folds = nlohmann::ordered_json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"fold", f.fold},
                     {"n_eval", f.n_eval},
                     {"max_iterations", f.max_iterations},
                     {"mean_iterations", f.mean_iterations},
                     {"negative_psi", f.negative_psi},
                     {"rows_with_negative_psi", f.rows_with_negative_psi},
                     {"ridge_fallback", f.ridge_fallback}});
  j["fold_diagnostics"] = folds;
  return j.dump();
}

EstimateResult summarize_influence(const std::vector<double>& psi, const std::vector<int>& a, double level) {
  const std::size_t n = psi.size();
  double sum_psi = 0.0, sum_a = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum_psi += psi[i];
    sum_a += a[i];
  }
  if (sum_a == 0) fail(ErrorCode::EmptyArm, "no treated rows");
  EstimateResult r;
  r.n = n;
  r.level = level;
  r.tau_hat = sum_psi / sum_a;
  const double pa = sum_a / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = (psi[i] - a[i] * r.tau_hat) / pa;
    ss += v * v;
  }
  const double sigma = std::sqrt(ss / static_cast<double>(n));
  r.se = sigma / std::sqrt(static_cast<double>(n));
  const double zq = normal_quantile(0.5 + level / 2);
  r.ci = {r.tau_hat - zq * r.se, r.tau_hat + zq * r.se};
  return r;
}

std::vector<int> assign_folds(std::size_t n, int k, std::uint64_t seed, std::uint64_t split) {
  if (k < 2) fail(ErrorCode::ConfigError, "k_folds must be >= 2");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed, "folds", split);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<int> fold(n);
  for (std::size_t pos = 0; pos < n; ++pos) fold[perm[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
  return fold;
}

namespace {

[[noreturn]] void rethrow_in_fold(const Error& e, int fold) {
  throw Error(e.code(), "fold " + std::to_string(fold) + ": " + e.what());
}

// Step 2 at one covariate value: fixed point, odds, and influence weights.
LocalEif identify_at(const NuisanceTheta& theta, Covariates x, const OutcomeGrid& grid, const FixedPointOptions& opt,
                     FoldDiagnostics& diag, double& iter_sum) {
  const LocalTheta local = theta.at(x);
  const GStar g = solve_gstar(local, grid, opt);
  diag.max_iterations = std::max(diag.max_iterations, g.iterations);
  iter_sum += g.iterations;
  if (g.negative_psi > 0) {
    diag.negative_psi += g.negative_psi;
    ++diag.rows_with_negative_psi;
  }
  return LocalEif(local, recover_odds(g, local, grid, opt.density_floor), grid);
}

// Runs the fold loop and hands every held-out row's LocalEif to `sink`.
template <class Sink>
std::vector<FoldDiagnostics> for_each_heldout(const Dataset& data, const RunConfig& config,
                                              const std::vector<int>& folds, const OutcomeGrid& grid, Sink&& sink) {
  config.check();
  validate(data);
  if (folds.size() != data.size()) fail(ErrorCode::InvalidArgument, "fold vector length differs from data");
  const int K = *std::max_element(folds.begin(), folds.end()) + 1;
  const FixedPointOptions opt = fixed_point_options(config);
  std::vector<std::vector<std::size_t>> test(static_cast<std::size_t>(K)), train(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int k = 0; k < K; ++k) (folds[i] == k ? test : train)[static_cast<std::size_t>(k)].push_back(i);
  std::vector<FoldDiagnostics> diag(static_cast<std::size_t>(K));
  parallel_for(static_cast<std::size_t>(K), config.jobs, [&](std::size_t k) {
    const int fk = static_cast<int>(k);
    auto& d = diag[k];
    d.fold = fk;
    d.n_eval = test[k].size();
    try {
      std::size_t treated = 0;
      for (std::size_t i : test[k]) treated += static_cast<std::size_t>(data.a(i));
      if (treated == 0) fail(ErrorCode::EmptyArm, "held-out fold has no treated rows");
      const auto theta = fit_theta(data.subset(train[k]), grid, config);
      d.ridge_fallback = theta->instrument_model().fit().ridge || theta->treatment_model().fit().ridge;
      double iter_sum = 0.0;
      for (std::size_t i : test[k]) sink(i, identify_at(*theta, data.x(i), grid, opt, d, iter_sum));
      d.mean_iterations = test[k].empty() ? 0.0 : iter_sum / static_cast<double>(test[k].size());
    } catch (const Error& e) {
      rethrow_in_fold(e, fk);
    }
  });
  return diag;
}

std::vector<std::string> flags_from(const std::vector<FoldDiagnostics>& diag) {
  std::vector<std::string> flags;
  bool neg = false, ridge = false;
  for (const auto& d : diag) {
    neg = neg || d.negative_psi > 0;
    ridge = ridge || d.ridge_fallback;
  }
  if (neg) flags.emplace_back("negative_psi_floored");
  if (ridge) flags.emplace_back("ridge_fallback");
  return flags;
}

}  // namespace

CrossfitCache::CrossfitCache(const Dataset& data, const RunConfig& config, const std::vector<int>& folds)
    : data_(&data), grid_(std::make_shared<const OutcomeGrid>(make_outcome_grid(data, config))) {
  std::vector<std::optional<LocalEif>> slots(data.size());
  diag_ = for_each_heldout(data, config, folds, *grid_, [&](std::size_t i, LocalEif&& le) { slots[i].emplace(std::move(le)); });
  local_.reserve(data.size());
  for (auto& s : slots) local_.push_back(std::move(*s));
  flags_ = flags_from(diag_);
}

CrossfitCache::CrossfitCache(const Dataset& data, const NuisanceTheta& theta, const RunConfig& config)
    : data_(&data), grid_(std::make_shared<const OutcomeGrid>(theta.grid())) {
  const FixedPointOptions opt = fixed_point_options(config);
  FoldDiagnostics d;
  d.n_eval = data.size();
  double iter_sum = 0.0;
  local_.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) local_.push_back(identify_at(theta, data.x(i), *grid_, opt, d, iter_sum));
  d.mean_iterations = data.size() ? iter_sum / static_cast<double>(data.size()) : 0.0;
  diag_ = {d};
  flags_ = flags_from(diag_);
}

std::vector<double> CrossfitCache::phi(const OutcomeTransform& G) const {
  std::vector<double> out(data_->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const OmegaParts parts = local_[i].omega_parts(G, false);
    out[i] = local_[i].phi(data_->a(i), data_->z(i), data_->y(i), G, parts);
  }
  return out;
}

CrossfitPass crossfit_phi(const Dataset& data, const RunConfig& config, const std::vector<int>& folds,
                          const OutcomeTransform& G) {
  const OutcomeGrid grid = make_outcome_grid(data, config);
  CrossfitPass pass;
  pass.phi.assign(data.size(), 0.0);
  pass.folds = for_each_heldout(data, config, folds, grid, [&](std::size_t i, LocalEif&& le) {
    const OmegaParts parts = le.omega_parts(G, false);
    pass.phi[i] = le.phi(data.a(i), data.z(i), data.y(i), G, parts);
  });
  pass.flags = flags_from(pass.folds);
  return pass;
}

EstimateResult crossfit_att(const Dataset& data, const RunConfig& config, const std::vector<int>& folds,
                            const OutcomeTransform& G) {
  CrossfitPass pass = crossfit_phi(data, config, folds, G);
  EstimateResult r = summarize_influence(pass.phi, data.as(), config.level);
  r.method = "sepiv";
  r.k_folds = static_cast<int>(pass.folds.size());
  r.seed = config.seed;
  r.flags = std::move(pass.flags);
  r.folds = std::move(pass.folds);
  return r;
}

EstimateResult crossfit_att(const Dataset& data, const RunConfig& config, const OutcomeTransform& G) {
  return crossfit_att(data, config, assign_folds(data.size(), config.k_folds, config.seed), G);
}

EstimateResult estimate_with_theta(const Dataset& data, const NuisanceTheta& theta, const RunConfig& config,
                                   const OutcomeTransform& G) {
  validate(data);
  const CrossfitCache cache(data, theta, config);
  EstimateResult r = summarize_influence(cache.phi(G), data.as(), config.level);
  r.method = "sepiv";
  r.k_folds = 0;
  r.seed = config.seed;
  r.flags = cache.flags();
  r.flags.emplace_back("exact_nuisance");
  r.folds = cache.diagnostics();
  return r;
}

EstimateResult median_combine(const std::vector<EstimateResult>& runs) {
  if (runs.empty()) fail(ErrorCode::InvalidArgument, "median adjustment needs at least one run");
  if (runs.size() == 1) return runs.front();
  std::vector<double> taus;
  for (const auto& r : runs) taus.push_back(r.tau_hat);
  EstimateResult out = runs.front();
  out.tau_hat = median(taus);
  std::vector<double> vars;
  for (const auto& r : runs) vars.push_back(r.se * r.se + (r.tau_hat - out.tau_hat) * (r.tau_hat - out.tau_hat));
  out.se = std::sqrt(median(vars));
  const double zq = normal_quantile(0.5 + out.level / 2);
  out.ci = {out.tau_hat - zq * out.se, out.tau_hat + zq * out.se};
  out.folds.clear();
  std::vector<std::string> flags;
  for (const auto& r : runs)
    for (const auto& f : r.flags)
      if (std::find(flags.begin(), flags.end(), f) == flags.end()) flags.push_back(f);
  flags.push_back("median_of_" + std::to_string(runs.size()));
  out.flags = flags;
  for (const auto& r : runs) out.folds.insert(out.folds.end(), r.folds.begin(), r.folds.end());
  return out;
}

EstimateResult median_adjust(const Dataset& data, const RunConfig& config, int S, const OutcomeTransform& G) {
  if (S < 1) fail(ErrorCode::ConfigError, "median_reps must be >= 1");
  std::vector<EstimateResult> runs;
  for (int s = 0; s < S; ++s)
    runs.push_back(
        crossfit_att(data, config, assign_folds(data.size(), config.k_folds, config.seed, static_cast<std::uint64_t>(s)), G));
  return median_combine(runs);
}

// ---- comparison estimators ----------------------------------------------------

namespace {

Eigen::MatrixXd design_with(const Dataset& data, std::initializer_list<const std::vector<int>*> cols) {
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd X(n, 1 + static_cast<Eigen::Index>(cols.size()) + data.dim());
  X.col(0).setOnes();
  Eigen::Index c = 1;
  for (const auto* v : cols) {
    for (Eigen::Index i = 0; i < n; ++i) X(i, c) = (*v)[static_cast<std::size_t>(i)];
    ++c;
  }
  if (data.dim() > 0) X.rightCols(data.dim()) = data.xs();
  return X;
}

VectorXd as_vector(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void require_full_rank(const Eigen::MatrixXd& X, const char* what) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) fail(ErrorCode::RankDeficient, std::string(what) + " design is rank deficient");
}

EstimateResult wald(const std::string& method, double est, double se, std::size_t n, double level) {
  EstimateResult r;
  r.method = method;
  r.tau_hat = est;
  r.se = se;
  r.n = n;
  r.level = level;
  const double zq = normal_quantile(0.5 + level / 2);
  r.ci = {est - zq * se, est + zq * se};
  return r;
}

}  // namespace

EstimateResult est_2sls(const Dataset& data, double level) {
  validate(data);
  const Eigen::MatrixXd W = design_with(data, {&data.zs()});  // (1, Z, X)
  const Eigen::MatrixXd D = design_with(data, {&data.as()});  // (1, A, X)
  const VectorXd y = as_vector(data.ys());
  require_full_rank(W, "first-stage");
  require_full_rank(D, "second-stage");
  // first stage A ~ (1, Z, X)
  VectorXd a(D.rows());
  for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = data.a(static_cast<std::size_t>(i));
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_w(W);
  const VectorXd pi = qr_w.solve(a);
  Eigen::MatrixXd Dhat = D;
  Dhat.col(1) = W * pi;
  require_full_rank(Dhat, "projected");
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_d(Dhat);
  const VectorXd b = qr_d.solve(y);
  const VectorXd e = y - D * b;
  const double n = static_cast<double>(D.rows());
  const double s2 = e.squaredNorm() / (n - static_cast<double>(D.cols()));
  const Eigen::MatrixXd V = s2 * (Dhat.transpose() * Dhat).inverse();
  EstimateResult r = wald("twostage_ls", b[1], std::sqrt(V(1, 1)), data.size(), level);
  // first-stage strength: squared t statistic of Z
  const VectorXd ea = a - W * pi;
  const double s2a = ea.squaredNorm() / (n - static_cast<double>(W.cols()));
  const Eigen::MatrixXd Va = s2a * (W.transpose() * W).inverse();
  const double f_stat = pi[1] * pi[1] / Va(1, 1);
  if (f_stat < 10) r.flags.emplace_back("weak_first_stage");
  if (!std::isfinite(r.se)) r.flags.emplace_back("nonfinite_se");
  return r;
}

EstimateResult est_ols(const Dataset& data, double level) {
  validate(data);
  const Eigen::MatrixXd X = design_with(data, {&data.as(), &data.zs()});  // (1, A, Z, X)
  require_full_rank(X, "OLS");
  const VectorXd y = as_vector(data.ys());
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  const VectorXd b = qr.solve(y);
  const VectorXd e = y - X * b;
  const Eigen::MatrixXd bread = (X.transpose() * X).inverse();
  const Eigen::MatrixXd meat = X.transpose() * e.cwiseAbs2().asDiagonal() * X;
  const double n = static_cast<double>(X.rows()), p = static_cast<double>(X.cols());
  const Eigen::MatrixXd V = bread * meat * bread * (n / (n - p));  // HC1
  return wald("ols", b[1], std::sqrt(V(1, 1)), data.size(), level);
}

EstimateResult est_ignorability_aipw(const Dataset& data, const RunConfig& config) {
  config.check();
  validate(data);
  const auto folds = assign_folds(data.size(), config.k_folds, config.seed);
  std::vector<double> psi(data.size(), 0.0);
  bool ridge = false;
  for (int k = 0; k < config.k_folds; ++k) {
    std::vector<std::size_t> tr, te, tr_controls;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (folds[i] == k) {
        te.push_back(i);
      } else {
        tr.push_back(i);
        if (data.a(i) == 0) tr_controls.push_back(i);
      }
    }
    try {
      const Dataset train = data.subset(tr);
      const TreatmentModel ps = fit_treatment_model(train, config);
      ridge = ridge || ps.fit().ridge;
      // control outcome regression E(Y | A=0, Z, X), linear
      const Dataset controls = data.subset(tr_controls);
      const Eigen::MatrixXd Xc = design_with(controls, {&controls.zs()});
      const VectorXd coef = Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(Xc).solve(as_vector(controls.ys()));
      for (std::size_t i : te) {
        double m0 = coef[0] + coef[1] * data.z(i);
        const auto xi = data.x(i);
        for (std::size_t j = 0; j < xi.size(); ++j) m0 += coef[static_cast<Eigen::Index>(j) + 2] * xi[j];
        const double e = ps(data.z(i), xi);
        const double resid = data.y(i) - m0;
        psi[i] = data.a(i) == 1 ? resid : -e / (1 - e) * resid;
      }
    } catch (const Error& e) {
      rethrow_in_fold(e, k);
    }
  }
  EstimateResult r = summarize_influence(psi, data.as(), config.level);
  r.method = "ignorability_aipw";
  r.k_folds = config.k_folds;
  r.seed = config.seed;
  if (ridge) r.flags.emplace_back("ridge_fallback");
  return r;
}

}  // namespace sepiv
