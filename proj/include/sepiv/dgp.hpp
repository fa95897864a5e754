#pragma once

#include <functional>
#include <string>

#include "sepiv/core.hpp"
#include "sepiv/rng.hpp"

namespace sepiv {

struct SimOutput {
  Dataset data;
  std::vector<double> y1, y0;  // potential outcomes; never handed to estimators
  std::vector<double> latent;  // U for the choice model, empty otherwise
  double true_att = 0.0;
  std::string dgp_id;
  std::uint64_t seed = 0;
};

// Published reference values of the two benchmark designs.
inline constexpr double kContinuousStatedAtt = 1.0;
inline constexpr double kBinaryStatedAtt = 0.082;

// Odds-ratio shape for the continuous design: y(y-2) on [0,2], 1-(y-1)^-2 outside.
double continuous_alpha_shape(double y);

// Benchmark designs. X ~ N(0, I_3), W = sum(X), Z ~ Ber(expit(0.1 W)),
// A | Y0, Z, X ~ Ber(expit(log alpha + log beta)) with
// log beta = -2 + 4z + 0.1 W and log alpha = (0.4 + 0.05 W) * shape(Y0).
SimOutput simulate_continuous(std::size_t n, std::uint64_t seed, std::uint64_t replicate = 0);
SimOutput simulate_binary(std::size_t n, std::uint64_t seed, std::uint64_t replicate = 0);
// Continuous design with Y1 = Y0 (every treatment effect is zero).
SimOutput simulate_null_effect(std::size_t n, std::uint64_t seed, std::uint64_t replicate = 0);
// Y = tau A + sum(X)/2 + e with A confounded through e and instrumented by Z.
SimOutput simulate_linear_iv(std::size_t n, std::uint64_t seed, double tau = 1.5, std::uint64_t replicate = 0);
// Treatment randomized given (Z, X): no unmeasured confounding, effect varies with X.
SimOutput simulate_randomized(std::size_t n, std::uint64_t seed, std::uint64_t replicate = 0);

// Random-utility treatment choice with Gumbel shocks:
//   U_a = hbar_a(U, X) - c_a(Z, X) + interaction(U, Z, X) [a = 1 only] + e_a,
//   A = 1{U_1 > U_0}, Y_a = h_a(U, X).
struct ChoiceSpec {
  int d = 0;
  std::function<double(Rng&)> draw_u;  // default N(0, 1)
  std::function<double(Rng&)> draw_x;  // per covariate, default N(0, 1)
  std::function<double(Covariates)> instrument_prob;  // default 0.5
  std::function<double(double, Covariates)> h0, h1;
  std::function<double(double, Covariates)> hbar0, hbar1;
  std::function<double(int, Covariates)> c0, c1;
  std::function<double(double, int, Covariates)> interaction;  // empty = separable
  bool gumbel_errors = true;  // false is rejected: the model needs the shocks
};

// ConfigError if the instrument shifts both costs equally at x = 0, or if
// gumbel_errors is false.
SimOutput simulate_choice_model(std::size_t n, const ChoiceSpec& spec, std::uint64_t seed,
                                std::uint64_t replicate = 0, const std::string& id = "choice");

// Binary-outcome choice design used by the command line `--dgp choice`:
// d = 3, separable unless `interaction_strength` is nonzero, in which case
// the instrument pushes low-U units into treatment and high-U units out of it.
ChoiceSpec default_choice_spec(double interaction_strength = 0.0);

// Covariate-free binary law specified by (alpha(1), beta(0), beta(1), P(Y0=1), P(Z=1)).
struct ToyParams {
  double alpha1 = 2.0;
  double beta0 = 0.5;
  double beta1 = 3.0;
  double py0 = 0.4;
  double pz1 = 0.5;
};
// Potential outcome Y1 for the toy is Y1 ~ Ber(py1) independent of the rest given A=1.
SimOutput simulate_toy(std::size_t n, const ToyParams& p, std::uint64_t seed, double py1 = 0.7,
                       std::uint64_t replicate = 0);

struct OracleValue {
  double value = 0.0;
  double mc_se = 0.0;
};

// Monte Carlo truth over m draws of the design (continuous, binary,
// null_effect, linear_iv, randomized). estimand "att" or "qtt"; q is used for qtt.
OracleValue oracle_truth(const std::string& dgp_id, const std::string& estimand, std::size_t m_draws,
                         std::uint64_t seed, double q = 0.5);

SimOutput simulate_by_id(const std::string& dgp_id, std::size_t n, std::uint64_t seed, std::uint64_t replicate = 0);

}  // namespace sepiv
