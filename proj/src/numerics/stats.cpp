#include "adrl/numerics/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <numeric>

namespace adrl {

double mean(std::span<const double> x) {
  require(!x.empty(), "mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_stddev(std::span<const double> x) {
  if (x.size() < 2) {
    return 0.0;
  }
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) {
    ss += (v - m) * (v - m);
  }
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "pearson: length mismatch");
  require(x.size() >= 3, "pearson needs at least 3 points");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0, "pearson: x has zero variance");
  require(syy > 0.0, "pearson: y has zero variance");
  PearsonResult r;
  r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(x.size()) - 2.0;
  const double denom = 1.0 - r.rho * r.rho;
  if (denom <= 0.0) {
    r.p_value = std::numeric_limits<double>::min();
    return r;
  }
  const double t = std::abs(r.rho) * std::sqrt(df / denom);
  boost::math::students_t dist(df);
  r.p_value = std::max(2.0 * boost::math::cdf(boost::math::complement(dist, t)),
                       std::numeric_limits<double>::min());
  r.p_value = std::min(r.p_value, 1.0);
  return r;
}

double proportion_half_width(double p, std::size_t n) {
  require(n > 0, "proportion_half_width: n must be positive");
  return 1.959963984540054 * std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(n));
}

double mean_half_width(std::span<const double> x) {
  if (x.size() < 2) {
    return 0.0;
  }
  boost::math::students_t dist(static_cast<double>(x.size() - 1));
  const double tq = boost::math::quantile(dist, 0.975);
  return tq * sample_stddev(x) / std::sqrt(static_cast<double>(x.size()));
}

}  // namespace adrl
