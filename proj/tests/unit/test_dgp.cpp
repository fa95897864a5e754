#include <algorithm>
#include <cmath>
#include <sstream>

#include "../oracle/toy_law.hpp"
#include "doctest.h"
#include "sepiv/dgp.hpp"
#include "sepiv/stats.hpp"

using namespace sepiv;

namespace {

std::string csv_of(const SimOutput& s) {
  std::ostringstream o;
  write_csv(o, s.data);
  for (std::size_t i = 0; i < s.y1.size(); ++i) o << s.y1[i] << ' ' << s.y0[i] << '\n';
  o << s.true_att;
  return o.str();
}

}  // namespace

TEST_CASE("consistency holds row-wise in every simulator") {
  for (const char* id : {"continuous", "binary", "null_effect", "linear_iv", "randomized", "choice",
                         "choice_interaction"}) {
    const auto s = simulate_by_id(id, 2000, 1);
    CHECK(s.dgp_id == id);
    REQUIRE(s.y1.size() == s.data.size());
    for (std::size_t i = 0; i < s.data.size(); ++i)
      CHECK(s.data.y(i) == (s.data.a(i) ? s.y1[i] : s.y0[i]));
  }
  const auto toy = simulate_toy(500, {}, 2);
  for (std::size_t i = 0; i < toy.data.size(); ++i) CHECK(toy.data.y(i) == (toy.data.a(i) ? toy.y1[i] : toy.y0[i]));
}

TEST_CASE("simulators are reproducible and replicate streams differ") {
  for (const char* id : {"continuous", "binary", "choice"}) {
    CHECK(csv_of(simulate_by_id(id, 300, 7)) == csv_of(simulate_by_id(id, 300, 7)));
    CHECK(csv_of(simulate_by_id(id, 300, 7)) != csv_of(simulate_by_id(id, 300, 7, 1)));
    CHECK(csv_of(simulate_by_id(id, 300, 7)) != csv_of(simulate_by_id(id, 300, 8)));
  }
  CHECK_THROWS_AS(simulate_by_id("nope", 10, 1), Error);
}

TEST_CASE("stated truths and null design") {
  CHECK(simulate_continuous(10, 1).true_att == 1.0);
  CHECK(simulate_binary(10, 1).true_att == 0.082);
  const auto z = simulate_null_effect(1000, 1);
  CHECK(z.true_att == 0.0);
  for (std::size_t i = 0; i < z.y1.size(); ++i) CHECK(z.y1[i] == z.y0[i]);
  CHECK(simulate_continuous(10, 1).data.dim() == 3);
}

TEST_CASE("odds-ratio shape of the continuous design") {
  CHECK(continuous_alpha_shape(0.0) == 0.0);
  CHECK(continuous_alpha_shape(2.0) == 0.0);
  CHECK(continuous_alpha_shape(1.0) == -1.0);
  CHECK(continuous_alpha_shape(0.5) == doctest::Approx(-0.75));
  CHECK(continuous_alpha_shape(3.0) == doctest::Approx(0.75));
  CHECK(continuous_alpha_shape(-1.0) == doctest::Approx(0.75));
  // continuous at the branch points
  CHECK(continuous_alpha_shape(-1e-9) == doctest::Approx(0.0).scale(1));
  CHECK(continuous_alpha_shape(2.0 + 1e-9) == doctest::Approx(0.0).scale(1));
}

TEST_CASE("toy truth agrees with exact enumeration") {
  ToyParams p{1.7, 0.3, 2.2, 0.35, 0.6};
  toy_oracle::Params q{1.7, 0.3, 2.2, 0.35, 0.6, 0.55};
  const auto s = simulate_toy(10, p, 1, 0.55);
  CHECK(s.true_att == doctest::Approx(toy_oracle::enumerate(q).att).epsilon(1e-14));
  CHECK(s.data.dim() == 0);
}

TEST_CASE("choice model configuration errors") {
  auto spec = default_choice_spec();
  spec.gumbel_errors = false;
  CHECK_THROWS_AS(simulate_choice_model(10, spec, 1), Error);
  spec = default_choice_spec();
  spec.c0 = spec.c1;  // the instrument now shifts both costs equally
  CHECK_THROWS_AS(simulate_choice_model(10, spec, 1), Error);
  spec = default_choice_spec();
  spec.h1 = nullptr;
  CHECK_THROWS_AS(simulate_choice_model(10, spec, 1), Error);
}

TEST_CASE("difference of two Gumbel draws is standard logistic") {
  Rng r(2024, "gumbel");
  std::vector<double> d(1'000'000);
  for (auto& v : d) v = r.gumbel() - r.gumbel();
  std::sort(d.begin(), d.end());
  double sup = 0.0;
  const double n = static_cast<double>(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double F = 1.0 / (1.0 + std::exp(-d[i]));
    sup = std::max({sup, std::abs(F - i / n), std::abs(F - (i + 1) / n)});
  }
  CHECK(sup < 0.005);
}

TEST_CASE("oracle truth for a design with a known ATT") {
  const auto v = oracle_truth("randomized", "att", 200000, 3);
  CHECK(std::abs(v.value - 1.0) < 4 * v.mc_se + 1e-12);
  CHECK(v.mc_se > 0);
  const auto z = oracle_truth("null_effect", "qtt", 100000, 3, 0.5);
  CHECK(z.value == doctest::Approx(0.0).scale(1));
  CHECK_THROWS_AS(oracle_truth("continuous", "ate", 10, 1), Error);
}
