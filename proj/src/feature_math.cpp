#include "impairdetect/feature_math.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <string>
#include <unordered_set>

#include "impairdetect/stats.hpp"

namespace impairdetect::fmath {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kPi = 3.14159265358979323846;

// FFTW's planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Counts template matches under the Chebyshev distance for templates of length
// m starting at indices [0, count). Sorting by the first coordinate bounds the
// scan. `per_index` receives counts including self-matches.
void count_matches(Series x, int m, std::size_t count, double r, std::vector<std::size_t>& per_index,
                   std::size_t& pairs) {
  per_index.assign(count, 1);
  pairs = 0;
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  for (std::size_t a = 0; a < count; ++a) {
    const std::size_t i = order[a];
    for (std::size_t b = a + 1; b < count; ++b) {
      const std::size_t j = order[b];
      if (x[j] - x[i] > r) break;
      bool match = true;
      for (int k = 1; k < m; ++k) {
        if (std::abs(x[i + k] - x[j + k]) > r) {
          match = false;
          break;
        }
      }
      if (match) {
        ++per_index[i];
        ++per_index[j];
        ++pairs;
      }
    }
  }
}

}  // namespace

std::vector<std::complex<double>> rfft(Series x) {
  const int n = static_cast<int>(x.size());
  if (n == 0) return {};
  const int nout = n / 2 + 1;
  double* in = fftw_alloc_real(static_cast<std::size_t>(n));
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(nout));
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  std::copy(x.begin(), x.end(), in);
  fftw_execute(plan);
  std::vector<std::complex<double>> res(static_cast<std::size_t>(nout));
  for (int k = 0; k < nout; ++k) res[static_cast<std::size_t>(k)] = {out[k][0], out[k][1]};
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return res;
}

std::pair<std::vector<double>, std::vector<double>> welch(Series x, double fs) {
  const std::size_t n = x.size();
  const std::size_t nper = std::min<std::size_t>(256, n);
  if (nper < 2) return {};
  const std::size_t step = nper - nper / 2;
  std::vector<double> win(nper);
  double wss = 0.0;
  for (std::size_t i = 0; i < nper; ++i) {
    win[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(nper));
    wss += win[i] * win[i];
  }
  const std::size_t nf = nper / 2 + 1;
  std::vector<double> psd(nf, 0.0);
  std::vector<double> seg(nper);
  std::size_t segments = 0;
  for (std::size_t s = 0; s + nper <= n; s += step) {
    double mu = 0.0;
    for (std::size_t i = 0; i < nper; ++i) mu += x[s + i];
    mu /= static_cast<double>(nper);
    for (std::size_t i = 0; i < nper; ++i) seg[i] = (x[s + i] - mu) * win[i];
    auto spec = rfft(seg);
    for (std::size_t k = 0; k < nf; ++k) psd[k] += std::norm(spec[k]);
    ++segments;
  }
  const double scale = 1.0 / (fs * wss * static_cast<double>(segments));
  std::vector<double> freqs(nf);
  for (std::size_t k = 0; k < nf; ++k) {
    psd[k] *= scale;
    const bool edge = k == 0 || (nper % 2 == 0 && k == nf - 1);
    if (!edge) psd[k] *= 2.0;
    freqs[k] = static_cast<double>(k) * fs / static_cast<double>(nper);
  }
  return {freqs, psd};
}

double skewness(Series x) {
  const double m = stats::mean(x);
  double m2 = 0, m3 = 0;
  for (double v : x) {
    const double d = v - m;
    m2 += d * d;
    m3 += d * d * d;
  }
  const double n = static_cast<double>(x.size());
  m2 /= n;
  m3 /= n;
  if (!(m2 > 0.0)) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

double kurtosis(Series x) {
  const double m = stats::mean(x);
  double m2 = 0, m4 = 0;
  for (double v : x) {
    const double d2 = (v - m) * (v - m);
    m2 += d2;
    m4 += d2 * d2;
  }
  const double n = static_cast<double>(x.size());
  m2 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) return 0.0;
  return m4 / (m2 * m2) - 3.0;
}

LinearFit linear_trend(Series y) {
  const std::size_t n = y.size();
  LinearFit fit{kNaN, kNaN, kNaN, kNaN};
  if (n < 2) return fit;
  const double xm = 0.5 * static_cast<double>(n - 1);
  const double ym = stats::mean(y);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xm;
    const double dy = y[i] - ym;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  fit.slope = sxy / sxx;
  fit.intercept = ym - fit.slope * xm;
  fit.r = syy > 0.0 ? std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0) : 0.0;
  if (n > 2) fit.stderr_slope = std::sqrt(std::max(0.0, (1.0 - fit.r * fit.r) * syy / sxx / static_cast<double>(n - 2)));
  return fit;
}

double autocorrelation(Series x, std::size_t lag) {
  const std::size_t n = x.size();
  if (lag >= n) return kNaN;
  const double m = stats::mean(x);
  const double v = stats::variance(x);
  if (!(v > 0.0)) return kNaN;
  double acc = 0.0;
  for (std::size_t t = 0; t + lag < n; ++t) acc += (x[t] - m) * (x[t + lag] - m);
  return acc / (static_cast<double>(n - lag) * v);
}

std::vector<double> partial_autocorrelation(Series x, std::size_t max_lag) {
  const std::size_t n = x.size();
  std::vector<double> out(max_lag, kNaN);
  if (n < 2 * max_lag + 1) return out;
  const double m = stats::mean(x);
  double c0 = 0.0;
  for (double v : x) c0 += (v - m) * (v - m);
  if (!(c0 > 0.0)) return out;
  std::vector<double> r(max_lag + 1, 0.0);
  r[0] = 1.0;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double acc = 0.0;
    for (std::size_t t = 0; t + k < n; ++t) acc += (x[t] - m) * (x[t + k] - m);
    r[k] = acc / c0;
  }
  // Durbin-Levinson recursion.
  std::vector<double> phi(max_lag + 1, 0.0), prev(max_lag + 1, 0.0);
  double v = 1.0;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double num = r[k];
    for (std::size_t j = 1; j < k; ++j) num -= prev[j] * r[k - j];
    const double a = num / v;
    phi[k] = a;
    for (std::size_t j = 1; j < k; ++j) phi[j] = prev[j] - a * prev[k - j];
    v *= (1.0 - a * a);
    out[k - 1] = a;
    prev = phi;
    if (!(v > 0.0)) break;
  }
  return out;
}

double approximate_entropy(Series x, int m, double r) {
  const std::size_t n = x.size();
  if (n <= static_cast<std::size_t>(m + 1)) return kNaN;
  auto phi = [&](int mm) {
    const std::size_t count = n - static_cast<std::size_t>(mm) + 1;
    std::vector<std::size_t> c;
    std::size_t pairs = 0;
    count_matches(x, mm, count, r, c, pairs);
    double acc = 0.0;
    for (auto ci : c) acc += std::log(static_cast<double>(ci) / static_cast<double>(count));
    return acc / static_cast<double>(count);
  };
  return std::abs(phi(m) - phi(m + 1));
}

double sample_entropy(Series x, int m, double r) {
  const std::size_t n = x.size();
  if (n <= static_cast<std::size_t>(m + 1)) return kNaN;
  const std::size_t count = n - static_cast<std::size_t>(m);
  std::vector<std::size_t> per;
  std::size_t b = 0, a = 0;
  count_matches(x, m, count, r, per, b);
  count_matches(x, m + 1, count, r, per, a);
  if (a == 0 || b == 0) return kNaN;
  return -std::log(static_cast<double>(a) / static_cast<double>(b));
}

double permutation_entropy(Series x, int order, int delay) {
  const std::size_t span = static_cast<std::size_t>((order - 1) * delay);
  if (x.size() <= span) return kNaN;
  const std::size_t count = x.size() - span;
  std::vector<std::size_t> counts;
  std::vector<int> idx(static_cast<std::size_t>(order));
  std::vector<std::size_t> codes;
  codes.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return x[t + static_cast<std::size_t>(a * delay)] < x[t + static_cast<std::size_t>(b * delay)];
    });
    std::size_t code = 0;
    for (int v : idx) code = code * static_cast<std::size_t>(order) + static_cast<std::size_t>(v);
    codes.push_back(code);
  }
  std::sort(codes.begin(), codes.end());
  double h = 0.0;
  std::size_t i = 0;
  while (i < codes.size()) {
    std::size_t j = i;
    while (j < codes.size() && codes[j] == codes[i]) ++j;
    const double p = static_cast<double>(j - i) / static_cast<double>(count);
    h -= p * std::log(p);
    i = j;
  }
  return h;
}

double lempel_ziv_complexity(Series x, int bins) {
  const std::size_t n = x.size();
  if (n == 0) return kNaN;
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, hi = *hi_it;
  std::string seq(n, '\0');
  for (std::size_t i = 0; i < n; ++i) {
    // Bin edges are the upper bounds linspace(lo, hi, bins + 1)[1:], left-searched.
    int b = 0;
    for (int k = 1; k <= bins; ++k) {
      const double edge = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins);
      if (x[i] > edge) b = k;
    }
    seq[i] = static_cast<char>('a' + std::min(b, bins));
  }
  std::unordered_set<std::string> subs;
  std::size_t ind = 0, inc = 1;
  while (ind + inc <= n) {
    auto sub = seq.substr(ind, inc);
    if (subs.count(sub)) {
      ++inc;
    } else {
      subs.insert(std::move(sub));
      ind += inc;
      inc = 1;
    }
  }
  return static_cast<double>(subs.size()) / static_cast<double>(n);
}

double cid_ce(Series x, bool normalize) {
  if (x.size() < 2) return kNaN;
  double m = 0.0, s = 1.0;
  if (normalize) {
    m = stats::mean(x);
    s = stats::stddev(x);
    if (!(s > 0.0)) return 0.0;
  }
  double acc = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double d = (x[i] - m) / s - (x[i - 1] - m) / s;
    acc += d * d;
  }
  return std::sqrt(acc);
}

double binned_entropy(Series x, int bins) {
  if (x.empty()) return kNaN;
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return 0.0;
  std::vector<std::size_t> hist(static_cast<std::size_t>(bins), 0);
  for (double v : x) {
    auto b = static_cast<long>(std::floor((v - lo) / (hi - lo) * bins));
    b = std::clamp<long>(b, 0, bins - 1);
    ++hist[static_cast<std::size_t>(b)];
  }
  double h = 0.0;
  for (auto c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(x.size());
    h -= p * std::log(p);
  }
  return h;
}

std::vector<double> ar_coefficients(Series x, int order) {
  const auto p = static_cast<std::size_t>(order);
  std::vector<double> out(p + 1, kNaN);
  if (x.size() <= 3 * p + 1) return out;
  const std::size_t rows = x.size() - p;
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(p + 1));
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows));
  for (std::size_t t = p; t < x.size(); ++t) {
    const auto r = static_cast<Eigen::Index>(t - p);
    a(r, 0) = 1.0;
    for (std::size_t k = 1; k <= p; ++k) a(r, static_cast<Eigen::Index>(k)) = x[t - k];
    b(r) = x[t];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < static_cast<Eigen::Index>(p + 1)) return out;
  Eigen::VectorXd sol = qr.solve(b);
  for (std::size_t k = 0; k <= p; ++k) out[k] = sol(static_cast<Eigen::Index>(k));
  return out;
}

std::vector<double> friedrich_coefficients(Series x, int degree, int bins) {
  std::vector<double> out(static_cast<std::size_t>(degree + 1), kNaN);
  const std::size_t n = x.size();
  if (n < static_cast<std::size_t>(2 * bins)) return out;
  std::vector<double> sig(x.begin(), x.end() - 1);
  std::vector<double> sorted = sig;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges(static_cast<std::size_t>(bins + 1));
  for (int k = 0; k <= bins; ++k) edges[static_cast<std::size_t>(k)] = stats::quantile_sorted(sorted, static_cast<double>(k) / bins);
  for (std::size_t k = 1; k < edges.size(); ++k) {
    if (!(edges[k] > edges[k - 1])) return out;  // non-unique bin edges
  }
  std::vector<double> sx(static_cast<std::size_t>(bins), 0.0), sd(static_cast<std::size_t>(bins), 0.0);
  std::vector<std::size_t> cnt(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < sig.size(); ++i) {
    // Right-closed intervals (e_k, e_{k+1}], the lowest edge included in bin 0.
    auto it = std::lower_bound(edges.begin() + 1, edges.end(), sig[i]);
    auto b = static_cast<std::size_t>(it - (edges.begin() + 1));
    b = std::min(b, static_cast<std::size_t>(bins - 1));
    sx[b] += sig[i];
    sd[b] += x[i + 1] - x[i];
    ++cnt[b];
  }
  std::vector<double> xs, ys;
  for (std::size_t b = 0; b < cnt.size(); ++b) {
    if (cnt[b] == 0) continue;
    xs.push_back(sx[b] / static_cast<double>(cnt[b]));
    ys.push_back(sd[b] / static_cast<double>(cnt[b]));
  }
  if (xs.size() <= static_cast<std::size_t>(degree)) return out;
  Eigen::MatrixXd v(static_cast<Eigen::Index>(xs.size()), degree + 1);
  Eigen::VectorXd y(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int d = 0; d <= degree; ++d) v(r, d) = std::pow(xs[i], degree - d);
    y(r) = ys[i];
  }
  Eigen::VectorXd c = v.colPivHouseholderQr().solve(y);
  for (int d = 0; d <= degree; ++d) out[static_cast<std::size_t>(d)] = c(d);
  return out;
}

double max_langevin_fixed_point(Series x, int degree, int bins) {
  auto c = friedrich_coefficients(x, degree, bins);
  if (std::isnan(c[0])) return kNaN;
  // Strip negligible leading coefficients as polynomial root finders do.
  std::size_t lead = 0;
  double scale = 0.0;
  for (double v : c) scale = std::max(scale, std::abs(v));
  while (lead < c.size() && std::abs(c[lead]) <= 1e-14 * scale) ++lead;
  const auto deg = static_cast<Eigen::Index>(c.size() - lead) - 1;
  if (deg < 1) return kNaN;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(deg, deg);
  for (Eigen::Index j = 0; j < deg; ++j) companion(0, j) = -c[lead + 1 + static_cast<std::size_t>(j)] / c[lead];
  for (Eigen::Index i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < deg; ++i) best = std::max(best, es.eigenvalues()(i).real());
  return best;
}

AdfResult augmented_dickey_fuller(Series x) {
  AdfResult res{kNaN, kNaN};
  const std::size_t n = x.size();
  if (n < 10) return res;
  const std::size_t rows = n - 2;
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows), 3);
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows));
  for (std::size_t t = 2; t < n; ++t) {
    const auto r = static_cast<Eigen::Index>(t - 2);
    a(r, 0) = 1.0;
    a(r, 1) = x[t - 1];
    a(r, 2) = x[t - 1] - x[t - 2];
    b(r) = x[t] - x[t - 1];
  }
  Eigen::MatrixXd xtx = a.transpose() * a;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
  if (lu.rank() < 3) return res;
  Eigen::VectorXd beta = lu.solve(a.transpose() * b);
  const double rss = (b - a * beta).squaredNorm();
  const double s2 = rss / static_cast<double>(rows - 3);
  const double var_gamma = s2 * lu.inverse()(1, 1);
  if (!(var_gamma > 0.0)) return res;
  const double stat = beta(1) / std::sqrt(var_gamma);
  res.statistic = stat;
  // MacKinnon (1994/2010) approximate p-value, constant-only regression, one series.
  constexpr double tau_max = 2.74, tau_min = -18.83, tau_star = -1.61;
  if (stat > tau_max) {
    res.p_value = 1.0;
  } else if (stat < tau_min) {
    res.p_value = 0.0;
  } else if (stat <= tau_star) {
    res.p_value = normal_cdf(2.1659 + 1.4412 * stat + 0.038269 * stat * stat);
  } else {
    res.p_value = normal_cdf(1.7339 + 0.93202 * stat - 0.12745 * stat * stat - 0.010368 * stat * stat * stat);
  }
  return res;
}

std::vector<double> ricker_wavelet(std::size_t points, double width) {
  const double amp = 2.0 / (std::sqrt(3.0 * width) * std::pow(kPi, 0.25));
  const double wsq = width * width;
  std::vector<double> w(points);
  for (std::size_t i = 0; i < points; ++i) {
    const double v = static_cast<double>(i) - 0.5 * static_cast<double>(points - 1);
    const double xsq = v * v;
    w[i] = amp * (1.0 - xsq / wsq) * std::exp(-xsq / (2.0 * wsq));
  }
  return w;
}

std::vector<double> cwt_ricker(Series x, double width) {
  const std::size_t n = x.size();
  const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(10.0 * width), n);
  auto w = ricker_wavelet(len, width);
  std::vector<double> out(n, 0.0);
  const std::size_t offset = (len - 1) / 2;
  for (std::size_t i = 0; i < n; ++i) {
    // full[k] = sum_j x[j] w[k - j], same[i] = full[i + offset]
    const std::size_t k = i + offset;
    const std::size_t jlo = k + 1 >= len ? k + 1 - len : 0;
    const std::size_t jhi = std::min(k, n - 1);
    double acc = 0.0;
    for (std::size_t j = jlo; j <= jhi; ++j) acc += x[j] * w[k - j];
    out[i] = acc;
  }
  return out;
}

std::size_t number_peaks(Series x, std::size_t support) {
  std::size_t count = 0;
  if (x.size() <= 2 * support) return 0;
  for (std::size_t i = support; i + support < x.size(); ++i) {
    bool peak = true;
    for (std::size_t k = 1; k <= support && peak; ++k) peak = x[i] > x[i - k] && x[i] > x[i + k];
    if (peak) ++count;
  }
  return count;
}

std::size_t number_crossings(Series x, double m) {
  std::size_t count = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if ((x[i] > m) != (x[i - 1] > m)) ++count;
  }
  return count;
}

std::size_t longest_strike(Series x, double threshold, bool above) {
  std::size_t best = 0, run = 0;
  for (double v : x) {
    const bool hit = above ? v > threshold : v < threshold;
    run = hit ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best;
}

}  // namespace impairdetect::fmath
