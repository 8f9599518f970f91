#pragma once

#include <span>
#include <vector>

namespace impairdetect::stats {

double mean(std::span<const double> x);
/// Population variance (ddof 0).
double variance(std::span<const double> x);
double stddev(std::span<const double> x);

/// Linear-interpolation quantile of already-sorted data: position (n-1)q.
double quantile_sorted(std::span<const double> sorted, double q);
double quantile(std::span<const double> x, double q);
double median(std::span<const double> x);

/// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

double pearson(std::span<const double> x, std::span<const double> y);

}  // namespace impairdetect::stats
