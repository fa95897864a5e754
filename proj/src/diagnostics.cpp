#include "sepiv/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>

#include "sepiv/parallel.hpp"
#include "sepiv/rng.hpp"
#include "sepiv/stats.hpp"

namespace sepiv {

FalsificationReport falsify_direct(const NuisanceTheta& theta, const std::vector<std::vector<double>>& x_probes,
                                   double relevance_tol) {
  FalsificationReport r;
  r.mode = FalsifyMode::direct;
  const OutcomeGrid& grid = theta.grid();
  for (std::size_t k = 0; k < x_probes.size(); ++k) {
    const LocalTheta t = theta.at(x_probes[k]);
    const double p0 = 1.0 - t.p_a[1], q0 = 1.0 - t.p_a[0];  // f(A=0 | Z=1), f(A=0 | Z=0)
    const double den = p0 - q0;
    if (std::abs(den) < relevance_tol) {
      r.skipped_probes.push_back(k);
      continue;
    }
    for (int j = 0; j < grid.size(); ++j) {
      const double ratio = (p0 * t.f_y[1][j] - q0 * t.f_y[0][j]) / den;
      if (ratio < 0) r.violations.push_back({k, x_probes[k], grid.points[j], ratio});
    }
  }
  if (!r.skipped_probes.empty()) r.flags.emplace_back("weak_instrument_at_probe");
  r.rejected = !r.violations.empty();
  return r;
}

std::vector<double> ks_weights(const Dataset& data, const RunConfig& config, std::size_t* guarded) {
  const InstrumentModel fz = fit_instrument_model(data, config);
  const TreatmentModel fa = fit_treatment_model(data, config);
  std::vector<double> kappa(data.size(), 0.0);
  std::size_t n_guard = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.a(i) == 1) continue;
    const auto x = data.x(i);
    double den = fa(0, x) - fa(1, x);  // f(A=0|Z=1,x) - f(A=0|Z=0,x)
    if (std::abs(den) < config.relevance_tol) {
      den = den < 0 ? -config.relevance_tol : config.relevance_tol;
      ++n_guard;
    }
    const double pz = fz(x);
    kappa[i] = (data.z(i) - pz) / (pz * (1 - pz)) / den;
  }
  if (guarded) *guarded = n_guard;
  return kappa;
}

namespace {

// Bin layout of the cell class: one outcome binning and, per covariate, a
// quartile binning. Edges use the inverse-CDF quantile so that duplicating
// the data leaves them unchanged.
struct CellLayout {
  int ny = 1;
  std::vector<int> ybin;
  std::vector<int> nx;                 // per covariate (or one pseudo-covariate)
  std::vector<std::vector<int>> xbin;  // [covariate][row]
  std::size_t n_functions() const {
    std::size_t total = 0;
    const auto ry = static_cast<std::size_t>(ny * (ny + 1) / 2);
    for (int b : nx) total += ry * static_cast<std::size_t>(b * (b + 1) / 2);
    return total;
  }
};

int bin_of(double v, const std::vector<double>& edges) {
  return static_cast<int>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
}

std::vector<double> quantile_edges(const std::vector<double>& v, int bins) {
  std::vector<double> edges;
  for (int b = 1; b < bins; ++b) edges.push_back(quantile_inverse_cdf(v, static_cast<double>(b) / bins));
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

CellLayout make_layout(const Dataset& data) {
  CellLayout L;
  const std::size_t n = data.size();
  std::vector<double> uniq = data.ys();
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<double> yedges;
  if (uniq.size() <= 10) {
    yedges.assign(uniq.begin(), uniq.end() - 1);  // value k lands in bin k
  } else {
    yedges = quantile_edges(data.ys(), 10);
  }
  L.ny = static_cast<int>(yedges.size()) + 1;
  L.ybin.resize(n);
  for (std::size_t i = 0; i < n; ++i) L.ybin[i] = bin_of(data.y(i), yedges);
  const int d = std::max(data.dim(), 1);
  L.nx.assign(static_cast<std::size_t>(d), 1);
  L.xbin.assign(static_cast<std::size_t>(d), std::vector<int>(n, 0));
  for (int j = 0; j < data.dim(); ++j) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = data.x(i)[static_cast<std::size_t>(j)];
    const auto edges = quantile_edges(col, 4);
    L.nx[static_cast<std::size_t>(j)] = static_cast<int>(edges.size()) + 1;
    for (std::size_t i = 0; i < n; ++i) L.xbin[static_cast<std::size_t>(j)][i] = bin_of(col[i], edges);
  }
  return L;
}

struct Moment {
  double mean = 0.0;
  double sd = 0.0;
};

// Mean and sd of g * kappa for every g of the class, under row multiplicities
// `w` (empty = all ones). Order is fixed by the layout.
std::vector<Moment> class_moments(const CellLayout& L, const std::vector<double>& kappa, const std::vector<int>& w,
                                  TestClass cls) {
  const std::size_t n = kappa.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += w.empty() ? 1.0 : w[i];
  auto finish = [total](double s1, double s2) {
    Moment m;
    m.mean = s1 / total;
    m.sd = std::sqrt(std::max(s2 / total - m.mean * m.mean, 0.0));
    return m;
  };
  std::vector<Moment> out;
  if (cls == TestClass::constant) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = w.empty() ? 1.0 : w[i];
      s1 += wi * kappa[i];
      s2 += wi * kappa[i] * kappa[i];
    }
    out.push_back(finish(s1, s2));
    return out;
  }
  out.reserve(L.n_functions());
  for (std::size_t j = 0; j < L.nx.size(); ++j) {
    const int nx = L.nx[j];
    // 2D prefix sums with a zero border
    const int W = nx + 1;
    std::vector<double> P1(static_cast<std::size_t>((L.ny + 1) * W), 0.0), P2(P1.size(), 0.0);
    auto at = [W](int yb, int xb) { return static_cast<std::size_t>(yb * W + xb); };
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = w.empty() ? 1.0 : w[i];
      if (wi == 0.0 || kappa[i] == 0.0) continue;
      const auto idx = at(L.ybin[i] + 1, L.xbin[j][i] + 1);
      P1[idx] += wi * kappa[i];
      P2[idx] += wi * kappa[i] * kappa[i];
    }
    for (int yb = 1; yb <= L.ny; ++yb)
      for (int xb = 1; xb <= nx; ++xb) {
        P1[at(yb, xb)] += P1[at(yb - 1, xb)] + P1[at(yb, xb - 1)] - P1[at(yb - 1, xb - 1)];
        P2[at(yb, xb)] += P2[at(yb - 1, xb)] + P2[at(yb, xb - 1)] - P2[at(yb - 1, xb - 1)];
      }
    auto rect = [&](const std::vector<double>& P, int y0, int y1, int x0, int x1) {
      return P[at(y1, x1)] - P[at(y0, x1)] - P[at(y1, x0)] + P[at(y0, x0)];
    };
    for (int y0 = 0; y0 < L.ny; ++y0)
      for (int y1 = y0 + 1; y1 <= L.ny; ++y1)
        for (int x0 = 0; x0 < nx; ++x0)
          for (int x1 = x0 + 1; x1 <= nx; ++x1)
            out.push_back(finish(rect(P1, y0, y1, x0, x1), rect(P2, y0, y1, x0, x1)));
  }
  return out;
}

}  // namespace

FalsificationReport falsify_ks(const Dataset& data, const RunConfig& config, const KsOptions& opt) {
  config.check();
  validate(data);
  if (opt.b_reps < 1) fail(ErrorCode::ConfigError, "b_reps must be >= 1");
  if (!(opt.xi > 0)) fail(ErrorCode::ConfigError, "xi must be positive");
  if (!(opt.c > 0 && opt.c < 1)) fail(ErrorCode::ConfigError, "test level must lie in (0, 1)");

  FalsificationReport r;
  r.mode = FalsifyMode::ks_bootstrap;
  r.b_reps = opt.b_reps;
  r.level = opt.c;
  std::size_t guarded = 0;
  const std::vector<double> kappa = ks_weights(data, config, &guarded);
  if (guarded > 0) r.flags.emplace_back("relevance_guard");

  const CellLayout layout = make_layout(data);
  const std::vector<Moment> base = class_moments(layout, kappa, {}, opt.g_class);
  r.n_functions = base.size();
  const std::size_t n = data.size();
  const double root_n = std::sqrt(static_cast<double>(n));

  double min_norm = std::numeric_limits<double>::infinity();
  for (const auto& m : base) min_norm = std::min(min_norm, m.mean / std::max(opt.xi, m.sd));
  r.min_normalized_mean = min_norm;
  r.t_stat = -root_n * min_norm;

  std::vector<double> boot(static_cast<std::size_t>(opt.b_reps));
  parallel_for(boot.size(), config.jobs, [&](std::size_t b) {
    Rng rng(config.seed, "ks_bootstrap", b);
    std::vector<int> w(n, 0);
    for (std::size_t k = 0; k < n; ++k) ++w[rng.index(n)];
    std::array<std::size_t, 2> a_count{}, z_count{};
    for (std::size_t i = 0; i < n; ++i)
      if (w[i]) {
        ++a_count[static_cast<std::size_t>(data.a(i))];
        ++z_count[static_cast<std::size_t>(data.z(i))];
      }
    if (!a_count[0] || !a_count[1] || !z_count[0] || !z_count[1])
      fail(ErrorCode::InsufficientData, "bootstrap resample " + std::to_string(b) + " empties a treatment or instrument arm");
    const std::vector<Moment> star = class_moments(layout, kappa, w, opt.g_class);
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < star.size(); ++g) m = std::min(m, (star[g].mean - base[g].mean) / std::max(opt.xi, star[g].sd));
    boot[b] = -root_n * m;
  });

  r.crit_value = quantile(boot, 1.0 - opt.c);
  std::size_t exceed = 0;
  for (double t : boot) exceed += t >= r.t_stat ? 1 : 0;
  r.p_value = static_cast<double>(exceed) / static_cast<double>(boot.size());
  r.rejected = r.t_stat > r.crit_value;
  return r;
}

std::string falsification_to_json(const FalsificationReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode == FalsifyMode::direct ? "direct" : "ks_bootstrap";
  if (r.mode == FalsifyMode::direct) {
    auto v = nlohmann::ordered_json::array();
    for (const auto& viol : r.violations) v.push_back({{"probe", viol.probe}, {"x", viol.x}, {"y", viol.y}, {"ratio", viol.ratio}});
    j["violations"] = v;
    j["skipped_probes"] = r.skipped_probes;
  } else {
    j["t_stat"] = r.t_stat;
    j["crit_value"] = r.crit_value;
    j["p_value"] = r.p_value;
    j["b_reps"] = r.b_reps;
    j["level"] = r.level;
    j["n_functions"] = r.n_functions;
    j["min_normalized_mean"] = r.min_normalized_mean;
  }
  j["rejected"] = r.rejected;
  j["flags"] = r.flags;
  return j.dump();
}

// ---- QTT ------------------------------------------------------------------------

double wald_pvalue(double rho, double se) {
  if (!(se > 0) || !std::isfinite(se)) return rho == 0 ? 1.0 : 0.0;
  return std::erfc(std::abs(rho / se) / std::sqrt(2.0));
}

QttProfile::QttProfile(const Dataset& data, const RunConfig& config)
    : data_(&data), cache_(data, config, assign_folds(data.size(), config.k_folds, config.seed)), level_(config.level) {}

QttProfile::Point QttProfile::evaluate(double tau_q, double tau1, double q) const {
  const ThresholdTransform G(tau1 - tau_q, q);
  std::vector<double> psi = cache_.phi(G);
  for (std::size_t i = 0; i < psi.size(); ++i) psi[i] = data_->a(i) * G(data_->y(i)) - psi[i];
  const EstimateResult r = summarize_influence(psi, data_->as(), level_);
  return {r.tau_hat, r.se, wald_pvalue(r.tau_hat, r.se)};
}

double QttProfile::adjusted_p(double tau_q, const std::vector<double>& inner, double q, double c1) const {
  double best = 0.0;
  for (double t1 : inner) best = std::max(best, evaluate(tau_q, t1, q).p);
  return std::min(1.0, best + c1);
}

std::array<double, 2> treated_quantile_ci(const Dataset& data, double q, double c1, int reps, std::uint64_t seed) {
  std::vector<double> treated;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.a(i)) treated.push_back(data.y(i));
  if (treated.empty()) fail(ErrorCode::EmptyArm, "no treated rows");
  if (reps < 1) fail(ErrorCode::ConfigError, "bootstrap reps must be >= 1");
  Rng rng(seed, "qtt_bootstrap");
  std::vector<double> stats(static_cast<std::size_t>(reps)), res(treated.size());
  for (auto& s : stats) {
    for (auto& v : res) v = treated[rng.index(treated.size())];
    s = quantile_inverse_cdf(res, q);
  }
  return {quantile(stats, c1 / 2), quantile(stats, 1 - c1 / 2)};
}

QttInterval qtt_ci(const Dataset& data, const RunConfig& config, const QttOptions& opt) {
  if (!(opt.q > 0 && opt.q < 1)) fail(ErrorCode::InvalidArgument, "q must lie in (0, 1)");
  if (!(opt.c1 > 0 && opt.c1 < opt.c && opt.c < 1)) fail(ErrorCode::InvalidArgument, "need 0 < c1 < c < 1");
  if (opt.n_candidates < 2 || opt.n_inner < 1) fail(ErrorCode::InvalidArgument, "candidate grids too small");
  config.check();
  validate(data);

  QttInterval out;
  out.q = opt.q;
  out.c = opt.c;
  out.c1 = opt.c1;
  std::vector<double> treated;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.a(i)) treated.push_back(data.y(i));
  out.tau1_hat = quantile_inverse_cdf(treated, opt.q);
  out.tau1_ci = treated_quantile_ci(data, opt.q, opt.c1, opt.boot_reps, config.seed);

  std::vector<double> inner(static_cast<std::size_t>(opt.n_inner));
  for (int k = 0; k < opt.n_inner; ++k)
    inner[static_cast<std::size_t>(k)] =
        opt.n_inner == 1 ? out.tau1_hat
                         : out.tau1_ci[0] + (out.tau1_ci[1] - out.tau1_ci[0]) * k / (opt.n_inner - 1);

  const auto [ymin, ymax] = std::minmax_element(data.ys().begin(), data.ys().end());
  const double range = *ymax - *ymin;
  out.resolution = 2 * range / (opt.n_candidates - 1);
  for (int k = 0; k < opt.n_candidates; ++k) out.candidates.push_back(-range + out.resolution * k);

  const QttProfile profile(data, config);
  out.flags = profile.flags();
  out.pbar.assign(out.candidates.size(), 0.0);
  parallel_for(out.candidates.size(), config.jobs,
               [&](std::size_t k) { out.pbar[k] = profile.adjusted_p(out.candidates[k], inner, opt.q, opt.c1); });

  std::vector<std::size_t> accepted;
  for (std::size_t k = 0; k < out.pbar.size(); ++k)
    if (out.pbar[k] > opt.c) accepted.push_back(k);
  if (accepted.empty()) {
    out.empty = true;
    out.flags.emplace_back("empty_interval");
    return out;
  }
  if (accepted.back() - accepted.front() + 1 != accepted.size()) out.flags.emplace_back("non_convex_acceptance");

  // Move each end toward its rejected neighbour while the adjusted p-value stays above c.
  auto refine = [&](double in, double outside) {
    for (int s = 0; s < opt.refine_steps; ++s) {
      const double mid = 0.5 * (in + outside);
      (profile.adjusted_p(mid, inner, opt.q, opt.c1) > opt.c ? in : outside) = mid;
    }
    return in;
  };
  const std::size_t lo = accepted.front(), hi = accepted.back();
  out.interval[0] = lo > 0 ? refine(out.candidates[lo], out.candidates[lo - 1]) : out.candidates[lo];
  out.interval[1] = hi + 1 < out.candidates.size() ? refine(out.candidates[hi], out.candidates[hi + 1]) : out.candidates[hi];
  if (lo == 0 || hi + 1 == out.candidates.size()) out.flags.emplace_back("interval_reaches_candidate_edge");
  return out;
}

std::string qtt_to_json(const QttInterval& r) {
  nlohmann::ordered_json j;
  j["q"] = r.q;
  j["c"] = r.c;
  j["c1"] = r.c1;
  j["empty"] = r.empty;
  if (r.empty)
    j["interval"] = nullptr;
  else
    j["interval"] = {r.interval[0], r.interval[1]};
  j["tau1_hat"] = r.tau1_hat;
  j["tau1_ci"] = {r.tau1_ci[0], r.tau1_ci[1]};
  j["resolution"] = r.resolution;
  j["candidates"] = r.candidates;
  j["pbar"] = r.pbar;
  j["flags"] = r.flags;
  return j.dump();
}

}  // namespace sepiv
