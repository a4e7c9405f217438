#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace mazelab {

double mean(std::span<const double> xs);
// Population standard deviation (divides by n).
double stddev(std::span<const double> xs);

// 1-based ranks; tied values share the average of their ranks.
std::vector<double> average_ranks(std::span<const double> xs);

// Linear interpolation between order statistics; q in [0, 1]. Input need not be sorted.
double quantile(std::span<const double> xs, double q);

struct BoxStats {
  std::size_t n = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
  double whisker_lo = 0, whisker_hi = 0;  // most extreme points within 1.5 IQR
};
BoxStats box_stats(std::span<const double> xs);

struct SpearmanResult {
  std::size_t n = 0;
  bool defined = false;  // false when either variable is constant or n < 3
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, t approximation with n - 2 degrees of freedom
};
SpearmanResult spearman(std::span<const double> x, std::span<const double> y);

// Two-sided p-value for a Pearson-type correlation r over n pairs.
double correlation_p_value(double r, std::size_t n);

}  // namespace mazelab
