#pragma once

#include <complex>
#include <span>
#include <vector>

namespace impairdetect::fmath {

using Series = std::span<const double>;

std::vector<std::complex<double>> rfft(Series x);
/// One-sided Welch density: Hann window, nperseg = min(256, n), 50 % overlap,
/// per-segment mean removal. Returns (frequencies, density).
std::pair<std::vector<double>, std::vector<double>> welch(Series x, double fs);

double skewness(Series x);
double kurtosis(Series x);  // excess

struct LinearFit {
  double slope, intercept, r, stderr_slope;
};
/// Least-squares line of y against its index 0..n-1.
LinearFit linear_trend(Series y);

double autocorrelation(Series x, std::size_t lag);
std::vector<double> partial_autocorrelation(Series x, std::size_t max_lag);

double approximate_entropy(Series x, int m, double r);
/// -ln(A/B); NaN when no (m+1)-matches exist. r == 0 compares for equality.
double sample_entropy(Series x, int m, double r);
double permutation_entropy(Series x, int order, int delay = 1);
double lempel_ziv_complexity(Series x, int bins);
double cid_ce(Series x, bool normalize);
double binned_entropy(Series x, int bins);

/// Intercept followed by lag coefficients of AR(order) fitted by least squares.
std::vector<double> ar_coefficients(Series x, int order);

/// Polynomial (highest degree first) fitted to binned drift dx against x.
std::vector<double> friedrich_coefficients(Series x, int degree, int bins);
double max_langevin_fixed_point(Series x, int degree, int bins);

struct AdfResult {
  double statistic, p_value;
};
/// Constant-only Dickey-Fuller regression with one lagged difference; MacKinnon
/// approximate p-value.
AdfResult augmented_dickey_fuller(Series x);

std::vector<double> ricker_wavelet(std::size_t points, double width);
/// Same-mode convolution with the Ricker wavelet of the given width.
std::vector<double> cwt_ricker(Series x, double width);

std::size_t number_peaks(Series x, std::size_t support);
std::size_t number_crossings(Series x, double m);
std::size_t longest_strike(Series x, double threshold, bool above);

}  // namespace impairdetect::fmath
