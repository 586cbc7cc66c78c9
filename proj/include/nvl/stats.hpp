#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace nvl {

struct Estimate {
  double mean = 0.0;
  double se = 0.0;
};

double mean(std::span<const double> xs);
double variance(std::span<const double> xs);  // unbiased

// Batch-means estimate of the mean of a correlated series; falls back to the
// i.i.d. formula when the series is too short for the requested batches.
Estimate batch_means(std::span<const double> xs, std::size_t n_batches = 32);

// Standard error of the mean assuming independent samples.
Estimate iid_estimate(std::span<const double> xs);

// Sokal-windowed integrated autocorrelation time (in samples).
double integrated_autocorr_time(std::span<const double> xs, double window_c = 5.0);

// Two-sample Kolmogorov-Smirnov statistic and the asymptotic critical value.
double ks_statistic(std::vector<double> a, std::vector<double> b);
double ks_critical_value(std::size_t n, std::size_t m, double alpha = 0.01);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

}  // namespace nvl
