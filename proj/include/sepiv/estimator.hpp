#pragma once

#include <optional>
#include <string>

#include "sepiv/eif.hpp"

namespace sepiv {

struct FoldDiagnostics {
  int fold = 0;
  std::size_t n_eval = 0;
  int max_iterations = 0;
  double mean_iterations = 0.0;
  int negative_psi = 0;         // floored coordinates across the fold's fixed points
  int rows_with_negative_psi = 0;
  bool ridge_fallback = false;  // any logistic fit needed the ridge penalty
};

struct EstimateResult {
  std::string method;  // sepiv, twostage_ls, ignorability_aipw, ols
  double tau_hat = 0.0;
  double se = 0.0;
  std::array<double, 2> ci{};
  double level = 0.95;
  std::size_t n = 0;
  int k_folds = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> flags;
  std::vector<FoldDiagnostics> folds;
};

std::string result_to_json(const EstimateResult& r, const std::optional<double>& truth = std::nullopt);

// tau = sum(psi) / sum(a); variance from (psi_i - a_i tau) / mean(a); Wald CI
// at `level`.
EstimateResult summarize_influence(const std::vector<double>& psi, const std::vector<int>& a, double level);

// Seeded shuffle, then fold = position mod k: near-equal folds keyed by row index.
std::vector<int> assign_folds(std::size_t n, int k, std::uint64_t seed, std::uint64_t split = 0);

// Per-row cache of everything the influence function needs that does not
// depend on the transform. Built once, then evaluated for many transforms.
class CrossfitCache {
 public:
  CrossfitCache(const Dataset& data, const RunConfig& config, const std::vector<int>& folds);
  // exact-nuisance mode: one supplied theta for every row, no fitting
  CrossfitCache(const Dataset& data, const NuisanceTheta& theta, const RunConfig& config);

  // Uncentered influence values for transform G, one per row.
  std::vector<double> phi(const OutcomeTransform& G) const;
  const OutcomeGrid& grid() const { return *grid_; }
  const std::vector<FoldDiagnostics>& diagnostics() const { return diag_; }
  const std::vector<std::string>& flags() const { return flags_; }

 private:
  const Dataset* data_;
  std::shared_ptr<const OutcomeGrid> grid_;  // stable address for the LocalEif entries
  std::vector<LocalEif> local_;
  std::vector<FoldDiagnostics> diag_;
  std::vector<std::string> flags_;
};

// Influence values straight from fitted folds without keeping the cache.
struct CrossfitPass {
  std::vector<double> phi;
  std::vector<FoldDiagnostics> folds;
  std::vector<std::string> flags;
};
CrossfitPass crossfit_phi(const Dataset& data, const RunConfig& config, const std::vector<int>& folds,
                          const OutcomeTransform& G);

EstimateResult crossfit_att(const Dataset& data, const RunConfig& config,
                            const OutcomeTransform& G = IdentityTransform{});
// Same with a caller-supplied fold assignment.
EstimateResult crossfit_att(const Dataset& data, const RunConfig& config, const std::vector<int>& folds,
                            const OutcomeTransform& G = IdentityTransform{});

// Exact-nuisance mode: theta supplied, Step 1 skipped.
EstimateResult estimate_with_theta(const Dataset& data, const NuisanceTheta& theta, const RunConfig& config,
                                   const OutcomeTransform& G = IdentityTransform{});

// Median over S seeded splits: tau = median tau_s, se^2 = median(se_s^2 + (tau_s - tau)^2).
EstimateResult median_adjust(const Dataset& data, const RunConfig& config, int S,
                             const OutcomeTransform& G = IdentityTransform{});
EstimateResult median_combine(const std::vector<EstimateResult>& runs);

EstimateResult est_2sls(const Dataset& data, double level = 0.95);
EstimateResult est_ols(const Dataset& data, double level = 0.95);
EstimateResult est_ignorability_aipw(const Dataset& data, const RunConfig& config);

}  // namespace sepiv
