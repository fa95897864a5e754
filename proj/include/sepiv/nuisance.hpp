#pragma once

#include <array>
#include <memory>

#include "sepiv/core.hpp"

namespace sepiv {

// The observed-data parameterization evaluated at one covariate value.
struct LocalTheta {
  double p_z1 = 0.5;             // P(Z=1 | x)
  std::array<double, 2> p_a{};   // P(A=1 | Z=z, x)
  std::array<VectorXd, 2> f_y;   // Y | A=0, Z=z, x on the outcome grid

  // instrument arm with the lower / higher treatment probability
  int z_min() const { return p_a[1] < p_a[0] ? 1 : 0; }
  int z_max() const { return 1 - z_min(); }
  // WeakInstrument when the arms are closer than tol (or tied).
  void check_relevance(double tol) const;
};

// R_Y(y) = f_y(y | z_max) / f_y(y | z_min) on the grid.
VectorXd density_ratio(const LocalTheta& theta, double relevance_tol);

double clip_probability(double p, double floor);
// Normalize a nonnegative grid function to unit quadrature mass, then if any
// value sits below the floor mix with the constant floor so that the result
// is >= floor and still integrates to one.
VectorXd clip_density(const VectorXd& raw, const OutcomeGrid& grid, double floor);

class NuisanceTheta {
 public:
  explicit NuisanceTheta(OutcomeGrid grid) : grid_(std::move(grid)) {}
  virtual ~NuisanceTheta() = default;

  virtual double f_z(Covariates x) const = 0;
  virtual double f_a(int z, Covariates x) const = 0;
  virtual VectorXd f_y(int z, Covariates x) const = 0;

  LocalTheta at(Covariates x) const;
  const OutcomeGrid& grid() const { return grid_; }

 private:
  OutcomeGrid grid_;
};

// Covariate-free law given directly; used for exact-nuisance runs and tests.
class TabulatedTheta : public NuisanceTheta {
 public:
  TabulatedTheta(OutcomeGrid grid, LocalTheta local) : NuisanceTheta(std::move(grid)), local_(std::move(local)) {}
  double f_z(Covariates) const override { return local_.p_z1; }
  double f_a(int z, Covariates) const override { return local_.p_a[static_cast<std::size_t>(z)]; }
  VectorXd f_y(int z, Covariates) const override { return local_.f_y[static_cast<std::size_t>(z)]; }

 private:
  LocalTheta local_;
};

// ---- learners -------------------------------------------------------------

struct LogisticFit {
  VectorXd coef;
  Eigen::MatrixXd cov;  // inverse observed information
  int iterations = 0;
  bool ridge = false;   // separation fallback was used
};

// Newton/IRLS. Falls back to a ridge fit (penalty ridge_lambda * n / 2 * |b|^2)
// when the unpenalized iterations do not settle; NoConvergence if that fails too.
LogisticFit fit_logistic(const Eigen::MatrixXd& design, const VectorXd& y, double ridge_lambda = 1e-4,
                         int max_iter = 100);

// Multinomial logit with class 0 as reference; coefficients are (classes-1) x p.
struct MultinomialFit {
  Eigen::MatrixXd coef;
  int iterations = 0;
  bool ridge = false;
};
MultinomialFit fit_multinomial(const Eigen::MatrixXd& design, const std::vector<int>& cls, int classes,
                               double ridge_lambda = 1e-4, int max_iter = 100);

// Feature maps. The instrument model uses (1, x). The treatment model uses
// (1, z, x) and, in the "interacted" form, z*x as well.
enum class TreatmentBasis { linear, interacted };

class InstrumentModel {
 public:
  InstrumentModel() = default;
  InstrumentModel(LogisticFit fit, double floor) : fit_(std::move(fit)), floor_(floor) {}
  double operator()(Covariates x) const;
  const LogisticFit& fit() const { return fit_; }

 private:
  LogisticFit fit_;
  double floor_ = 0.01;
};

class TreatmentModel {
 public:
  TreatmentModel() = default;
  TreatmentModel(LogisticFit fit, TreatmentBasis basis, double floor)
      : fit_(std::move(fit)), basis_(basis), floor_(floor) {}
  double operator()(int z, Covariates x) const;
  const LogisticFit& fit() const { return fit_; }

 private:
  LogisticFit fit_;
  TreatmentBasis basis_ = TreatmentBasis::linear;
  double floor_ = 0.01;
};

InstrumentModel fit_instrument_model(const Dataset& train, const RunConfig& config);
TreatmentModel fit_treatment_model(const Dataset& train, const RunConfig& config,
                                   TreatmentBasis basis = TreatmentBasis::interacted);

// Conditional law of Y given x within one (A=0, Z=z) cell, as an unnormalized
// nonnegative function on the grid.
class OutcomeModel {
 public:
  virtual ~OutcomeModel() = default;
  virtual VectorXd raw_density(Covariates x) const = 0;
};

// Empirical pmf; covariates are ignored.
class FrequencyTable : public OutcomeModel {
 public:
  FrequencyTable(const OutcomeGrid& grid, const std::vector<double>& ys);
  VectorXd raw_density(Covariates) const override { return pmf_; }

 private:
  VectorXd pmf_;
};

class MultinomialOutcome : public OutcomeModel {
 public:
  MultinomialOutcome(const OutcomeGrid& grid, const std::vector<double>& ys, const RowMatrix& xs);
  VectorXd raw_density(Covariates x) const override;

 private:
  int m_;
  std::vector<int> present_;  // grid index of each modelled class
  MultinomialFit fit_;
};

// Gaussian product kernel in (Y, X) with normal-reference bandwidths.
class KernelConditionalDensity : public OutcomeModel {
 public:
  KernelConditionalDensity(const OutcomeGrid& grid, const std::vector<double>& ys, const RowMatrix& xs,
                           double bandwidth_scale);
  VectorXd raw_density(Covariates x) const override;
  double bandwidth_y() const { return h_y_; }
  const VectorXd& bandwidth_x() const { return h_x_; }

 private:
  Eigen::MatrixXd ky_;  // grid x train kernel values in y
  RowMatrix xs_;
  double h_y_ = 1.0;
  VectorXd h_x_;
};

// Controls pooled over the instrument: f(y | A=0, x) from the product kernel,
// split by Bayes' rule f(y | A=0, z, x) ∝ f(y | A=0, x) P(Z=z | A=0, y, x)
// with a logistic model for the instrument among controls. Its features are
// (1, x, t, t^2, t*x) where t is y clamped to the training range and
// standardized, so the arm ratio stays bounded beyond the data. Pooling
// matters when one arm has few controls (strong instruments).
class PooledTilt {
 public:
  PooledTilt(const OutcomeGrid& grid, const Dataset& controls, const RunConfig& config);
  VectorXd pooled(Covariates x) const { return kernel_.raw_density(x); }
  // P(Z=z | A=0, y_k, x) on the grid, clipped to [prob_floor, 1 - prob_floor]
  VectorXd arm_probability(int z, Covariates x) const;
  const LogisticFit& fit() const { return fit_; }

  static int width(int d) { return 3 + 2 * d; }
  void features(double y, Covariates x, double* out) const;

 private:
  VectorXd points_;
  KernelConditionalDensity kernel_;
  LogisticFit fit_;
  double lo_ = 0.0, hi_ = 0.0, center_ = 0.0, scale_ = 1.0;
  double floor_ = 0.01;
};

class TiltedOutcome : public OutcomeModel {
 public:
  TiltedOutcome(std::shared_ptr<const PooledTilt> model, int z) : model_(std::move(model)), z_(z) {}
  VectorXd raw_density(Covariates x) const override {
    return model_->pooled(x).cwiseProduct(model_->arm_probability(z_, x));
  }

 private:
  std::shared_ptr<const PooledTilt> model_;
  int z_;
};

// EmptyCell if there are no controls with Z=z.
std::unique_ptr<OutcomeModel> fit_outcome_model(const Dataset& train, int z, const OutcomeGrid& grid,
                                                const RunConfig& config);
// Both arms at once; uses the pooled learner when config asks for it on a
// continuous grid, otherwise fit_outcome_model per arm.
std::array<std::shared_ptr<OutcomeModel>, 2> fit_outcome_models(const Dataset& train, const OutcomeGrid& grid,
                                                                const RunConfig& config);

class FittedTheta : public NuisanceTheta {
 public:
  FittedTheta(OutcomeGrid grid, InstrumentModel fz, TreatmentModel fa, std::array<std::shared_ptr<OutcomeModel>, 2> fy,
              ClipConfig clip);
  double f_z(Covariates x) const override { return fz_(x); }
  double f_a(int z, Covariates x) const override { return fa_(z, x); }
  VectorXd f_y(int z, Covariates x) const override;

  const InstrumentModel& instrument_model() const { return fz_; }
  const TreatmentModel& treatment_model() const { return fa_; }
  const OutcomeModel& outcome_model(int z) const { return *fy_[static_cast<std::size_t>(z)]; }

 private:
  InstrumentModel fz_;
  TreatmentModel fa_;
  std::array<std::shared_ptr<OutcomeModel>, 2> fy_;
  ClipConfig clip_;
};

// Fits all three components on a training sample. EmptyArm if the sample
// misses an instrument or treatment arm.
std::shared_ptr<FittedTheta> fit_theta(const Dataset& train, const OutcomeGrid& grid, const RunConfig& config);

}  // namespace sepiv
