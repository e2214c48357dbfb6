#pragma once

#include "adrl/common.hpp"

#include <span>

namespace adrl {

struct PearsonResult {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, Student t with n-2 degrees of freedom
};

PearsonResult pearson(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> x);
double sample_stddev(std::span<const double> x);

// 95% half-widths: normal approximation for a proportion in [0,1], and a
// t-interval for a sample mean.
double proportion_half_width(double p, std::size_t n);
double mean_half_width(std::span<const double> x);

}  // namespace adrl
