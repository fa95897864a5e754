#pragma once

#include <optional>
#include <string>

#include "sepiv/estimator.hpp"

namespace sepiv {

// ---- falsification ------------------------------------------------------------

struct Violation {
  std::size_t probe = 0;
  std::vector<double> x;
  double y = 0.0;
  double ratio = 0.0;  // negative by definition
};

enum class FalsifyMode { direct, ks_bootstrap };

struct FalsificationReport {
  FalsifyMode mode = FalsifyMode::direct;
  // direct mode
  std::vector<Violation> violations;
  std::vector<std::size_t> skipped_probes;  // instrument too weak at these x
  // KS mode
  double t_stat = 0.0;
  double crit_value = 0.0;
  double p_value = 1.0;
  int b_reps = 0;
  double level = 0.05;
  std::size_t n_functions = 0;
  // min over the class of mean(g kappa) / max(xi, sd(g kappa)); scale-free in n
  double min_normalized_mean = 0.0;
  bool rejected = false;
  std::vector<std::string> flags;
};

// Signed ratio
//   [f(y, A=0 | Z=1, x) - f(y, A=0 | Z=0, x)] / [f(A=0 | Z=1, x) - f(A=0 | Z=0, x)]
// on the grid at every probe; any negative cell is a violation. Probes where
// the treatment probabilities differ by less than relevance_tol are skipped.
FalsificationReport falsify_direct(const NuisanceTheta& theta, const std::vector<std::vector<double>>& x_probes,
                                   double relevance_tol = 0.02);

// The test function family for the bootstrap test.
//   cells: indicators of a contiguous range of outcome bins times a contiguous
//          range of quartile bins of one covariate (each covariate in turn).
//          Outcome bins are the distinct values when there are at most 10 of
//          them, deciles otherwise.
//   constant: the single function g = 1.
enum class TestClass { cells, constant };

struct KsOptions {
  int b_reps = 200;
  double xi = 0.05;
  double c = 0.05;  // test level
  TestClass g_class = TestClass::cells;
};

// Weight kappa_i = (1 - A_i) / [f(A=0|Z=1,x_i) - f(A=0|Z=0,x_i)] * (Z_i - f_Z(x_i)) / [f_Z(1 - f_Z)]
// with nuisances fitted on the full sample and then held fixed.
// T = -sqrt(n) min_g mean(g kappa) / max(xi, sd(g kappa)), compared with the
// (1 - c) quantile of its re-centered bootstrap analogue.
FalsificationReport falsify_ks(const Dataset& data, const RunConfig& config, const KsOptions& opt = {});

// Per-row weights used by falsify_ks; `guarded` counts rows whose
// denominator was pushed out to +-relevance_tol.
std::vector<double> ks_weights(const Dataset& data, const RunConfig& config, std::size_t* guarded = nullptr);

std::string falsification_to_json(const FalsificationReport& r);

// ---- quantile effect on the treated ------------------------------------------------

struct QttOptions {
  double q = 0.5;
  double c = 0.05;
  double c1 = 0.001;
  int n_candidates = 81;    // equispaced over +-(range of Y)
  int n_inner = 41;         // treated-quantile values inside its bootstrap CI
  int boot_reps = 500;
  int refine_steps = 12;    // bisection steps per interval endpoint; 0 = grid only
};

struct QttInterval {
  double q = 0.5;
  double c = 0.05;
  double c1 = 0.001;
  bool empty = false;
  std::array<double, 2> interval{};  // hull of accepted candidates, refined at the ends
  double tau1_hat = 0.0;             // q-quantile of Y among treated
  std::array<double, 2> tau1_ci{};
  std::vector<double> candidates;
  std::vector<double> pbar;          // adjusted p-value per candidate
  double resolution = 0.0;           // candidate spacing
  std::vector<std::string> flags;
};

// Two-sided Wald p-value for a moment estimate; monotone decreasing in |rho/se|.
double wald_pvalue(double rho, double se);

// Cross-fitted moment E[1{Y0 <= tau1 - tau_q} - q | A=1] at fixed nuisances.
class QttProfile {
 public:
  QttProfile(const Dataset& data, const RunConfig& config);
  struct Point {
    double rho = 0.0;
    double se = 0.0;
    double p = 1.0;
  };
  Point evaluate(double tau_q, double tau1, double q) const;
  // max over tau1 in `inner` of p, plus c1 (capped at 1)
  double adjusted_p(double tau_q, const std::vector<double>& inner, double q, double c1) const;
  const std::vector<std::string>& flags() const { return cache_.flags(); }

 private:
  const Dataset* data_;
  CrossfitCache cache_;
  double level_;
};

// Percentile bootstrap CI at level 1 - c1 for the q-quantile of Y | A=1.
std::array<double, 2> treated_quantile_ci(const Dataset& data, double q, double c1, int reps, std::uint64_t seed);

// InvalidArgument unless 0 < q < 1 and 0 < c1 < c < 1.
QttInterval qtt_ci(const Dataset& data, const RunConfig& config, const QttOptions& opt = {});

std::string qtt_to_json(const QttInterval& r);

}  // namespace sepiv
