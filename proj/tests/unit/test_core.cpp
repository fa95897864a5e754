#include <cmath>
#include <sstream>

#include "doctest.h"
#include "sepiv/core.hpp"
#include "sepiv/rng.hpp"
#include "sepiv/stats.hpp"

using namespace sepiv;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::EmptyInterval;
}

Dataset small(int d = 1) {
  RowMatrix x(4, d);
  x.setZero();
  for (int i = 0; i < 4; ++i) x(i, 0) = i;
  return Dataset({1.0, 2.0, 3.0, 4.0}, {0, 0, 1, 1}, {0, 1, 0, 1}, x);
}

}  // namespace

TEST_CASE("dataset rejects bad codings") {
  RowMatrix x(2, 0);
  CHECK(code_of([&] { Dataset({1, 2}, {0, 2}, {0, 1}, x); }) == ErrorCode::NonBinary);
  CHECK(code_of([&] { Dataset({1, 2}, {0, 1}, {0, -1}, x); }) == ErrorCode::NonBinary);
  CHECK(code_of([&] { Dataset({1, NAN}, {0, 1}, {0, 1}, x); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { Dataset({1, 2, 3}, {0, 1}, {0, 1}, RowMatrix(3, 0)); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("validate counts cells and flags empty arms") {
  const auto d = small();
  const auto rep = validate(d);
  CHECK(rep.n == 4);
  CHECK(rep.treated() == 2);
  CHECK(rep.cell[1][1] == 1);
  CHECK(rep.y_min == 1.0);
  CHECK(rep.y_max == 4.0);
  const auto missing = Dataset({1, 2, 3}, {0, 0, 1}, {0, 1, 0}, RowMatrix(3, 0));
  CHECK(code_of([&] { validate(missing); }) == ErrorCode::EmptyArm);
}

TEST_CASE("subset keeps rows in order") {
  const auto d = small();
  const auto s = d.subset({3, 1});
  REQUIRE(s.size() == 2);
  CHECK(s.y(0) == 4.0);
  CHECK(s.z(1) == 1);
  CHECK(s.x(0)[0] == 3.0);
}

TEST_CASE("grids") {
  const auto g = make_discrete_grid({2.0, 0.0, 1.0, 1.0});
  CHECK(g.size() == 3);
  CHECK(g.kind == GridKind::discrete);
  CHECK(g.find(1.0) == 1);
  CHECK(g.find(0.5) == -1);
  CHECK(g.measure() == doctest::Approx(3.0));
  CHECK(code_of([] { make_discrete_grid({1.0}); }) == ErrorCode::DegenerateOutcome);

  // trapezoid rule on a standard normal density
  const auto c = make_continuous_grid(-8, 8, 401);
  VectorXd f(c.size());
  for (int k = 0; k < c.size(); ++k) f[k] = std::exp(-0.5 * c.points[k] * c.points[k]) / std::sqrt(2 * M_PI);
  CHECK(c.integrate(f) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(c.measure() == doctest::Approx(16.0));

  VectorXd lin = c.points;
  CHECK(c.interpolate(lin, 0.123) == doctest::Approx(0.123));
  CHECK(c.interpolate(lin, 100.0) == doctest::Approx(8.0));
  CHECK(c.interpolate(lin, -100.0) == doctest::Approx(-8.0));
}

TEST_CASE("outcome grid switches to continuous above grid_size distinct values") {
  RunConfig cfg;
  cfg.grid_size = 3;
  const auto d = small();
  const auto g = make_outcome_grid(d, cfg);
  CHECK(g.kind == GridKind::continuous);
  CHECK(g.size() == 3);
  CHECK(g.points[0] < 1.0);
  CHECK(g.points[2] > 4.0);
  cfg.grid_size = 4;
  CHECK(make_outcome_grid(d, cfg).kind == GridKind::discrete);
}

TEST_CASE("config json round trip and strictness") {
  RunConfig c;
  c.k_folds = 3;
  c.seed = 99;
  c.clip.density_floor = 0.005;
  c.outcome_learner = "cell_kernel";
  const auto back = config_from_json(config_to_json(c));
  CHECK(back.k_folds == 3);
  CHECK(back.seed == 99);
  CHECK(back.clip.density_floor == 0.005);
  CHECK(back.outcome_learner == "cell_kernel");
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(code_of([] { config_from_json(R"({"k_fold": 3})"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { config_from_json(R"({"clip": {"floor": 1}})"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { config_from_json(R"({"k_folds": 1})"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { config_from_json(R"({"outcome_learner": "forest"})"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { config_from_json("{"); }) == ErrorCode::ConfigError);
}

TEST_CASE("csv round trip is exact") {
  RowMatrix x(2, 2);
  x << 0.1, -1e-300, 1.0 / 3.0, 12345.678;
  const Dataset d({0.30000000000000004, -2.5}, {1, 0}, {0, 1}, x);
  std::stringstream s;
  write_csv(s, d);
  const auto back = read_csv(s);
  REQUIRE(back.size() == 2);
  CHECK(back.dim() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.y(i) == d.y(i));
    CHECK(back.a(i) == d.a(i));
    CHECK(back.z(i) == d.z(i));
    for (int j = 0; j < 2; ++j) CHECK(back.x(i)[j] == d.x(i)[j]);
  }
}

TEST_CASE("csv header errors name the column") {
  auto message = [](const std::string& text) {
    std::istringstream in(text);
    try {
      read_csv(in);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ParseError);
      return std::string(e.what());
    }
    FAIL("parsed");
    return std::string();
  };
  CHECK(message("y,treat,z\n1,0,1\n").find("'treat'") != std::string::npos);
  CHECK(message("y,a,z,x2\n1,0,1,3\n").find("'x2'") != std::string::npos);
  CHECK(message("y,a\n1,0\n").find("'z'") != std::string::npos);
  CHECK(message("y,a,z\n1,0\n").find("line 2") != std::string::npos);
  CHECK(message("y,a,z\nabc,0,1\n").find("'y'") != std::string::npos);
  std::istringstream bad("y,a,z\n1,3,1\n");
  CHECK(code_of([&] { read_csv(bad); }) == ErrorCode::NonBinary);
}

TEST_CASE("normal quantile inverts the cdf") {
  for (double p : {1e-10, 1e-4, 0.01, 0.025, 0.3, 0.5, 0.8, 0.975, 0.999999}) {
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-9));
  }
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).scale(1));
}

TEST_CASE("sample quantiles") {
  const std::vector<double> v = {4, 1, 3, 2, 5};
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 5.0);
  CHECK(quantile(v, 0.5) == 3.0);
  CHECK(quantile(v, 0.1) == doctest::Approx(1.4));  // type 7: 1 + 0.4 (2 - 1)
  CHECK(quantile_inverse_cdf(v, 0.5) == 3.0);
  CHECK(quantile_inverse_cdf(v, 0.2) == 1.0);
  CHECK(quantile_inverse_cdf(v, 0.21) == 2.0);
  CHECK(median({1, 2, 3, 4}) == 2.5);
  CHECK(sample_sd(std::vector<double>{1, 2, 3, 4}) == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(expit(logit(0.3)) == doctest::Approx(0.3));
}

TEST_CASE("silverman bandwidth") {
  std::vector<double> v;
  Rng r(5);
  for (int i = 0; i < 1000; ++i) v.push_back(r.normal());
  const double sd = sample_sd(v);
  CHECK(silverman_bandwidth(v, 1) == doctest::Approx(sd * std::pow(4.0 / 3.0 / 1000, 0.2)));
}

TEST_CASE("rng streams") {
  Rng a(7, "continuous", 3), b(7, "continuous", 3), c(7, "continuous", 4), d(7, "binary", 3);
  const double va = a.uniform();
  CHECK(va == b.uniform());
  CHECK(va != c.uniform());
  CHECK(va != d.uniform());
  CHECK(stream_seed(1, "x", 0) != stream_seed(2, "x", 0));
}
