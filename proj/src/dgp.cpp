#include "sepiv/dgp.hpp"

#include <algorithm>
#include <cmath>

#include "sepiv/stats.hpp"

namespace sepiv {

double continuous_alpha_shape(double y) {
  if (y >= 0.0 && y <= 2.0) return y * (y - 2.0);
  return 1.0 - 1.0 / ((y - 1.0) * (y - 1.0));
}

namespace {

enum class Design { continuous, binary, null_effect };

SimOutput simulate_design(Design design, const char* id, std::size_t n, std::uint64_t seed, std::uint64_t replicate) {
  Rng rng(seed, id, replicate);
  std::vector<double> y(n), y0(n), y1(n);
  std::vector<int> a(n), z(n);
  RowMatrix x(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    double w = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double v = rng.normal();
      x(static_cast<Eigen::Index>(i), j) = v;
      w += v;
    }
    z[i] = rng.bernoulli(expit(0.1 * w));
    double shape = 0.0;
    if (design == Design::binary) {
      y0[i] = rng.bernoulli(expit(0.2 * w - 0.25));
      y1[i] = rng.bernoulli(expit(0.2 * w + 0.25));
      shape = 2.0 * y0[i];
    } else {
      y0[i] = 0.1 * w + rng.normal();
      y1[i] = 1.0 + 0.1 * w + 0.25 * rng.normal();
      if (design == Design::null_effect) y1[i] = y0[i];
      shape = continuous_alpha_shape(y0[i]);
    }
    const double log_alpha = (0.4 + 0.05 * w) * shape;
    const double log_beta = -2.0 + 4.0 * z[i] + 0.1 * w;
    a[i] = rng.bernoulli(expit(log_alpha + log_beta));
    y[i] = a[i] ? y1[i] : y0[i];
  }
  SimOutput out;
  out.data = Dataset(std::move(y), std::move(a), std::move(z), std::move(x));
  out.y0 = std::move(y0);
  out.y1 = std::move(y1);
  out.dgp_id = id;
  out.seed = seed;
  switch (design) {
    case Design::continuous: out.true_att = kContinuousStatedAtt; break;
    case Design::binary: out.true_att = kBinaryStatedAtt; break;
    case Design::null_effect: out.true_att = 0.0; break;
  }
  return out;
}

}  // namespace

SimOutput simulate_continuous(std::size_t n, std::uint64_t seed, std::uint64_t replicate) {
  return simulate_design(Design::continuous, "continuous", n, seed, replicate);
}

SimOutput simulate_binary(std::size_t n, std::uint64_t seed, std::uint64_t replicate) {
  return simulate_design(Design::binary, "binary", n, seed, replicate);
}

SimOutput simulate_null_effect(std::size_t n, std::uint64_t seed, std::uint64_t replicate) {
  return simulate_design(Design::null_effect, "null_effect", n, seed, replicate);
}

SimOutput simulate_linear_iv(std::size_t n, std::uint64_t seed, double tau, std::uint64_t replicate) {
  Rng rng(seed, "linear_iv", replicate);
  std::vector<double> y(n), y0(n), y1(n);
  std::vector<int> a(n), z(n);
  RowMatrix x(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    double w = 0.0;
    for (int j = 0; j < 3; ++j) w += (x(static_cast<Eigen::Index>(i), j) = rng.normal());
    z[i] = rng.bernoulli(0.5);
    const double u = rng.normal();  // shared by treatment and outcome
    a[i] = (-0.75 + 1.5 * z[i] + 0.2 * w + u + rng.normal() > 0) ? 1 : 0;
    y0[i] = 0.5 * w + u + rng.normal();
    y1[i] = y0[i] + tau;
    y[i] = a[i] ? y1[i] : y0[i];
  }
  SimOutput out;
  out.data = Dataset(std::move(y), std::move(a), std::move(z), std::move(x));
  out.y0 = std::move(y0);
  out.y1 = std::move(y1);
  out.true_att = tau;
  out.dgp_id = "linear_iv";
  out.seed = seed;
  return out;
}

SimOutput simulate_randomized(std::size_t n, std::uint64_t seed, std::uint64_t replicate) {
  Rng rng(seed, "randomized", replicate);
  std::vector<double> y(n), y0(n), y1(n);
  std::vector<int> a(n), z(n);
  RowMatrix x(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    double w = 0.0;
    for (int j = 0; j < 3; ++j) w += (x(static_cast<Eigen::Index>(i), j) = rng.normal());
    const double x1 = x(static_cast<Eigen::Index>(i), 0), x2 = x(static_cast<Eigen::Index>(i), 1);
    z[i] = rng.bernoulli(expit(0.1 * w));
    a[i] = rng.bernoulli(expit(-0.5 + 0.8 * z[i] + 0.4 * x1));
    y0[i] = 0.5 * w + rng.normal();
    // effect varies with x2, which does not enter treatment, so the ATT is 1
    y1[i] = y0[i] + 1.0 + 0.5 * x2;
    y[i] = a[i] ? y1[i] : y0[i];
  }
  SimOutput out;
  out.data = Dataset(std::move(y), std::move(a), std::move(z), std::move(x));
  out.y0 = std::move(y0);
  out.y1 = std::move(y1);
  out.true_att = 1.0;
  out.dgp_id = "randomized";
  out.seed = seed;
  return out;
}

SimOutput simulate_choice_model(std::size_t n, const ChoiceSpec& spec, std::uint64_t seed, std::uint64_t replicate,
                                const std::string& id) {
  if (!spec.gumbel_errors) fail(ErrorCode::ConfigError, "choice model requires Gumbel utility shocks");
  if (!spec.h0 || !spec.h1 || !spec.hbar0 || !spec.hbar1 || !spec.c0 || !spec.c1)
    fail(ErrorCode::ConfigError, "choice model needs h0, h1, hbar0, hbar1, c0 and c1");
  const std::vector<double> origin(static_cast<std::size_t>(spec.d), 0.0);
  const Covariates x0(origin);
  const double shift1 = spec.c1(1, x0) - spec.c1(0, x0);
  const double shift0 = spec.c0(1, x0) - spec.c0(0, x0);
  if (shift1 == shift0) fail(ErrorCode::ConfigError, "instrument must shift the two costs differently");

  Rng rng(seed, id, replicate);
  std::vector<double> y(n), y0(n), y1(n), lat(n);
  std::vector<int> a(n), z(n);
  RowMatrix x(static_cast<Eigen::Index>(n), spec.d);
  std::vector<double> xi(static_cast<std::size_t>(spec.d));
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < spec.d; ++j)
      x(static_cast<Eigen::Index>(i), j) = xi[static_cast<std::size_t>(j)] = spec.draw_x ? spec.draw_x(rng) : rng.normal();
    const Covariates cx(xi);
    const double u = spec.draw_u ? spec.draw_u(rng) : rng.normal();
    z[i] = rng.bernoulli(spec.instrument_prob ? spec.instrument_prob(cx) : 0.5);
    double u1 = spec.hbar1(u, cx) - spec.c1(z[i], cx) + rng.gumbel();
    const double u0 = spec.hbar0(u, cx) - spec.c0(z[i], cx) + rng.gumbel();
    if (spec.interaction) u1 += spec.interaction(u, z[i], cx);
    a[i] = u1 > u0 ? 1 : 0;
    y0[i] = spec.h0(u, cx);
    y1[i] = spec.h1(u, cx);
    lat[i] = u;
    y[i] = a[i] ? y1[i] : y0[i];
  }
  double diff = 0.0, treated = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (a[i]) {
      diff += y1[i] - y0[i];
      treated += 1;
    }
  SimOutput out;
  out.data = Dataset(std::move(y), std::move(a), std::move(z), std::move(x));
  out.y0 = std::move(y0);
  out.y1 = std::move(y1);
  out.latent = std::move(lat);
  out.true_att = treated > 0 ? diff / treated : 0.0;  // sample ATT: no closed form in general
  out.dgp_id = id;
  out.seed = seed;
  return out;
}

ChoiceSpec default_choice_spec(double interaction_strength) {
  ChoiceSpec s;
  s.d = 3;
  auto w = [](Covariates x) { return x[0] + x[1] + x[2]; };
  s.h0 = [](double u, Covariates) { return u > 0 ? 1.0 : 0.0; };
  s.h1 = [](double u, Covariates) { return u > -0.5 ? 1.0 : 0.0; };
  s.hbar0 = [](double, Covariates) { return 0.0; };
  s.hbar1 = [w](double u, Covariates x) { return -0.5 + 0.8 * (u > 0 ? 1.0 : 0.0) + 0.1 * w(x); };
  s.c0 = [](int, Covariates) { return 0.0; };
  s.c1 = [](int z, Covariates) { return -2.0 * z; };
  s.instrument_prob = [w](Covariates x) { return expit(0.1 * w(x)); };
  if (interaction_strength != 0.0)
    s.interaction = [interaction_strength](double u, int z, Covariates) {
      return -interaction_strength * z * (u > 0 ? 1.0 : 0.0);
    };
  return s;
}

SimOutput simulate_toy(std::size_t n, const ToyParams& p, std::uint64_t seed, double py1, std::uint64_t replicate) {
  Rng rng(seed, "toy", replicate);
  std::vector<double> y(n), y0(n), y1(n);
  std::vector<int> a(n), z(n);
  for (std::size_t i = 0; i < n; ++i) {
    y0[i] = rng.bernoulli(p.py0);
    z[i] = rng.bernoulli(p.pz1);
    const double odds = (y0[i] > 0 ? p.alpha1 : 1.0) * (z[i] ? p.beta1 : p.beta0);
    a[i] = rng.bernoulli(odds / (1 + odds));
    y1[i] = rng.bernoulli(py1);
    y[i] = a[i] ? y1[i] : y0[i];
  }
  SimOutput out;
  out.data = Dataset(std::move(y), std::move(a), std::move(z), RowMatrix(static_cast<Eigen::Index>(n), 0));
  out.y0 = std::move(y0);
  out.y1 = std::move(y1);
  // population ATT: py1 - P(Y0=1 | A=1)
  const double t1 = p.py0 * (p.pz1 * p.alpha1 * p.beta1 / (1 + p.alpha1 * p.beta1) +
                             (1 - p.pz1) * p.alpha1 * p.beta0 / (1 + p.alpha1 * p.beta0));
  const double t0 = (1 - p.py0) * (p.pz1 * p.beta1 / (1 + p.beta1) + (1 - p.pz1) * p.beta0 / (1 + p.beta0));
  out.true_att = py1 - t1 / (t1 + t0);
  out.dgp_id = "toy";
  out.seed = seed;
  return out;
}

SimOutput simulate_by_id(const std::string& dgp_id, std::size_t n, std::uint64_t seed, std::uint64_t replicate) {
  if (dgp_id == "continuous") return simulate_continuous(n, seed, replicate);
  if (dgp_id == "binary") return simulate_binary(n, seed, replicate);
  if (dgp_id == "null_effect") return simulate_null_effect(n, seed, replicate);
  if (dgp_id == "linear_iv") return simulate_linear_iv(n, seed, 1.5, replicate);
  if (dgp_id == "randomized") return simulate_randomized(n, seed, replicate);
  if (dgp_id == "choice") return simulate_choice_model(n, default_choice_spec(0.0), seed, replicate, "choice");
  if (dgp_id == "choice_interaction")
    return simulate_choice_model(n, default_choice_spec(2.5), seed, replicate, "choice_interaction");
  fail(ErrorCode::ConfigError, "unknown dgp '" + dgp_id + "'");
}

OracleValue oracle_truth(const std::string& dgp_id, const std::string& estimand, std::size_t m_draws,
                         std::uint64_t seed, double q) {
  if (estimand != "att" && estimand != "qtt") fail(ErrorCode::ConfigError, "estimand must be att or qtt");
  // batch means give a Monte Carlo SE for either estimand
  constexpr std::size_t kBatches = 20;
  const std::size_t per = std::max<std::size_t>(m_draws / kBatches, 1);
  std::vector<double> est;
  std::vector<double> t1_all, t0_all;
  double diff_all = 0.0, n1_all = 0.0;
  for (std::size_t b = 0; b < kBatches; ++b) {
    const SimOutput s = simulate_by_id(dgp_id, per, seed, 1000000 + b);
    std::vector<double> t1, t0;
    double diff = 0.0;
    for (std::size_t i = 0; i < per; ++i)
      if (s.data.a(i)) {
        t1.push_back(s.y1[i]);
        t0.push_back(s.y0[i]);
        diff += s.y1[i] - s.y0[i];
      }
    if (t1.empty()) continue;
    if (estimand == "att") {
      est.push_back(diff / static_cast<double>(t1.size()));
      diff_all += diff;
      n1_all += static_cast<double>(t1.size());
    } else {
      est.push_back(quantile_inverse_cdf(t1, q) - quantile_inverse_cdf(t0, q));
      t1_all.insert(t1_all.end(), t1.begin(), t1.end());
      t0_all.insert(t0_all.end(), t0.begin(), t0.end());
    }
  }
  OracleValue v;
  v.value = estimand == "att" ? diff_all / n1_all
                              : quantile_inverse_cdf(t1_all, q) - quantile_inverse_cdf(t0_all, q);
  v.mc_se = sample_sd(est) / std::sqrt(static_cast<double>(est.size()));
  return v;
}

}  // namespace sepiv
