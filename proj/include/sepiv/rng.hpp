#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace sepiv {

// Stream derivation: every (seed, label, index) triple maps through
// SplitMix64 to the seed of an independent std::mt19937_64. Labels name the
// consumer ("continuous", "folds", "bootstrap", ...) and index is the
// replicate or split number, so Monte Carlo replicates can run in any order.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t stream_seed(std::uint64_t seed, std::string_view label, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  Rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) : eng_(stream_seed(seed, label, index)) {}

  // in (0, 1): safe for logs
  double uniform() {
    double u;
    do u = std::generate_canonical<double, 53>(eng_);
    while (u <= 0.0);
    return u;
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }
  int bernoulli(double p) { return uniform() < p ? 1 : 0; }
  // standard Gumbel by inverse CDF
  double gumbel() { return -std::log(-std::log(uniform())); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_); }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace sepiv
