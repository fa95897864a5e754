#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sepiv/error.hpp"

namespace sepiv {

using Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Covariates = std::span<const double>;

struct ObservedRow {
  double y = 0.0;
  int a = 0;
  int z = 0;
  std::vector<double> x;
};

// Column store of (Y, A, Z, X). Construction checks shapes, finiteness and
// binary coding; arm coverage is left to validate() so degenerate samples
// can still be represented and reported.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<double> y, std::vector<int> a, std::vector<int> z, RowMatrix x);
  static Dataset from_rows(const std::vector<ObservedRow>& rows, int d);

  std::size_t size() const { return y_.size(); }
  int dim() const { return static_cast<int>(x_.cols()); }

  double y(std::size_t i) const { return y_[i]; }
  int a(std::size_t i) const { return a_[i]; }
  int z(std::size_t i) const { return z_[i]; }
  Covariates x(std::size_t i) const {
    return {x_.data() + i * static_cast<std::size_t>(x_.cols()), static_cast<std::size_t>(x_.cols())};
  }
  ObservedRow row(std::size_t i) const;

  const std::vector<double>& ys() const { return y_; }
  const std::vector<int>& as() const { return a_; }
  const std::vector<int>& zs() const { return z_; }
  const RowMatrix& xs() const { return x_; }

  Dataset subset(const std::vector<std::size_t>& idx) const;

 private:
  std::vector<double> y_;
  std::vector<int> a_;
  std::vector<int> z_;
  RowMatrix x_;
};

struct ValidationReport {
  std::size_t n = 0;
  int d = 0;
  std::size_t cell[2][2] = {{0, 0}, {0, 0}};  // [a][z]
  double y_min = 0.0;
  double y_max = 0.0;
  std::size_t treated() const { return cell[1][0] + cell[1][1]; }
};

// Throws EmptyArm when any (a, z) cell is empty.
ValidationReport validate(const Dataset& data);

enum class GridKind { discrete, continuous };

struct OutcomeGrid {
  VectorXd points;
  VectorXd weights;
  GridKind kind = GridKind::discrete;

  int size() const { return static_cast<int>(points.size()); }
  double integrate(const VectorXd& f) const { return weights.dot(f); }
  double measure() const { return weights.sum(); }
  // Index of an exact grid value, or -1.
  int find(double y) const;
  // Piecewise-linear interpolation of grid values, clamped at the ends.
  double interpolate(const VectorXd& values, double y) const;
};

OutcomeGrid make_discrete_grid(std::vector<double> points);
OutcomeGrid make_continuous_grid(double lo, double hi, int m);

struct FixedPointConfig {
  double tol = 1e-10;
  int max_iter = 10000;
};

struct ClipConfig {
  double prob_floor = 0.01;
  // Lower bound for outcome densities on the grid. Kernel tails of the two
  // instrument arms decay at different rates, and a tiny floor lets their
  // ratio collapse at the grid edge, which traps the fixed point in a tail
  // spike. 1e-2 keeps the mixing weight (floor times grid span) under ~10%
  // for unit-scale outcomes.
  double density_floor = 1e-2;
};

struct RunConfig {
  int k_folds = 5;
  int grid_size = 101;
  FixedPointConfig fixed_point;
  ClipConfig clip;
  std::uint64_t seed = 0;
  int median_reps = 1;
  double relevance_tol = 0.02;
  double level = 0.95;
  // multiplies every Silverman bandwidth; the hook for tuning by hand
  double bandwidth_scale = 1.0;
  // continuous outcomes: "pooled_tilt" (kernel density over all controls,
  // split by a logistic instrument model) or "cell_kernel" (one kernel
  // density per instrument arm)
  std::string outcome_learner = "pooled_tilt";
  int jobs = 1;

  void check() const;  // ConfigError on violated invariants
};

OutcomeGrid make_outcome_grid(const Dataset& data, const RunConfig& config);

// Unknown fields are rejected with ConfigError.
std::string config_to_json(const RunConfig& config);
RunConfig config_from_json(const std::string& text);

Dataset read_csv(std::istream& in);
Dataset read_csv_file(const std::string& path);
void write_csv(std::ostream& out, const Dataset& data);

}  // namespace sepiv
