#pragma once

#include <span>
#include <vector>

namespace sepiv {

double expit(double v);
double logit(double p);

double normal_cdf(double v);
// Acklam's rational approximation with one Halley refinement step.
double normal_quantile(double p);

double mean(std::span<const double> v);
double sample_sd(std::span<const double> v);
// Linear-interpolation sample quantile (R type 7).
double quantile(std::vector<double> v, double p);
// Inverse-CDF quantile: smallest order statistic whose ECDF reaches p.
double quantile_inverse_cdf(std::vector<double> v, double p);
double median(std::vector<double> v);

// Normal-reference bandwidth for one coordinate of a dim-variate product kernel:
// sd * (4 / ((dim + 2) n))^(1 / (dim + 4)). For dim = 1 it is Silverman's 1.06 sd n^-1/5.
double silverman_bandwidth(std::span<const double> v, int dim);

}  // namespace sepiv
