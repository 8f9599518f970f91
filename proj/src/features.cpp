#include "impairdetect/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <thread>
#include <unordered_map>

#include "impairdetect/feature_math.hpp"
#include "impairdetect/stats.hpp"

namespace impairdetect {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Params = std::vector<std::pair<std::string, io::Json>>;

std::string param_text(const io::Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "True" : "False";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return io::format_double(v.get<double>());
  return v.dump();
}

FeatureDef make_def(std::string family, std::string kind, const Params& params = {}) {
  FeatureDef d;
  d.family = std::move(family);
  d.kind = kind;
  d.name = kind;
  for (const auto& [k, v] : params) {
    d.name += "__" + k + "_" + param_text(v);
    d.params[k] = v;
  }
  return d;
}

}  // namespace

std::string_view to_string(FeatureModality m) { return m == FeatureModality::arousal ? "arousal" : "accel"; }

FeatureModality parse_feature_modality(std::string_view s) {
  if (s == "arousal") return FeatureModality::arousal;
  if (s == "accel") return FeatureModality::accel;
  throw ValidationError("unknown modality '" + std::string(s) + "'");
}

FeatureCatalog FeatureCatalog::default_catalog() {
  FeatureCatalog c;
  auto& f = c.features;
  auto add = [&](const char* family, const char* kind, const Params& p = {}) { f.push_back(make_def(family, kind, p)); };

  // spectral
  for (int k = 0; k < 8; ++k) add("spectral", "fft_coefficient", {{"attr", "abs"}, {"coeff", k}});
  for (int k = 0; k < 8; ++k) add("spectral", "fft_coefficient", {{"attr", "real"}, {"coeff", k}});
  for (int k = 1; k < 8; ++k) add("spectral", "fft_coefficient", {{"attr", "imag"}, {"coeff", k}});
  for (const char* a : {"centroid", "variance", "skew", "kurtosis"}) add("spectral", "fft_aggregated", {{"aggtype", a}});
  add("spectral", "fourier_entropy", {{"bins", 10}});
  for (int b = 0; b < 4; ++b) add("spectral", "welch_band_power", {{"band", b}, {"bands", 4}});
  for (int s = 0; s < 4; ++s) {
    add("spectral", "energy_ratio_by_chunks", {{"num_segments", 4}, {"segment_focus", s}});
  }

  // quantile
  for (double q : {0.1, 0.2, 0.25, 0.5, 0.75, 0.8, 0.9}) add("quantile", "quantile", {{"q", q}});
  for (double q : {0.25, 0.5, 0.75}) add("quantile", "index_mass_quantile", {{"q", q}});
  for (const char* a : {"mean", "var"}) {
    add("quantile", "change_quantiles", {{"f_agg", a}, {"isabs", true}, {"qh", 0.8}, {"ql", 0.2}});
  }
  add("quantile", "binned_entropy", {{"max_bins", 10}});

  // wavelet
  for (int w : {2, 5, 10, 20}) {
    for (const char* s : {"mean_abs", "std"}) add("wavelet", "cwt_coefficients", {{"stat", s}, {"width", w}});
  }
  add("wavelet", "number_cwt_peaks", {{"width", 5}});

  // trend
  for (const char* a : {"slope", "intercept", "rvalue", "stderr"}) add("trend", "linear_trend", {{"attr", a}});
  for (const char* agg : {"mean", "var"}) {
    for (const char* a : {"slope", "intercept", "rvalue", "stderr"}) {
      add("trend", "agg_linear_trend", {{"attr", a}, {"chunk_s", 30}, {"f_agg", agg}});
    }
  }

  // autocorrelation
  for (int l = 1; l <= 10; ++l) add("autocorrelation", "autocorrelation", {{"lag", l}});
  for (const char* a : {"mean", "var"}) add("autocorrelation", "agg_autocorrelation", {{"f_agg", a}, {"maxlag", 40}});
  for (int l = 1; l <= 5; ++l) add("autocorrelation", "partial_autocorrelation", {{"lag", l}});

  // counts
  add("counts", "count_above_mean");
  add("counts", "count_below_mean");
  add("counts", "range_count", {{"max", 1}, {"min", -1}});
  add("counts", "range_count", {{"max", 0}, {"min", -1000000000000.0}});
  add("counts", "range_count", {{"max", 1000000000000.0}, {"min", 0}});
  add("counts", "number_crossing_m", {{"m", 0}});
  add("counts", "number_crossing_m", {{"m", "mean"}});
  for (double r : {0.5, 1.0, 2.0}) add("counts", "ratio_beyond_r_sigma", {{"r", r}});
  add("counts", "value_count", {{"value", 0}});

  // entropy
  add("entropy", "approximate_entropy", {{"m", 2}, {"r", 0.2}});
  add("entropy", "sample_entropy", {{"m", 2}, {"r", 0.2}});
  add("entropy", "permutation_entropy", {{"dimension", 3}, {"tau", 1}});
  add("entropy", "lempel_ziv_complexity", {{"bins", 2}});
  add("entropy", "cid_ce", {{"normalize", true}});
  add("entropy", "cid_ce", {{"normalize", false}});

  // summary
  for (const char* k : {"mean", "median", "variance", "standard_deviation", "skewness", "kurtosis", "minimum",
                        "maximum", "abs_energy", "mean_abs_change"}) {
    add("summary", k);
  }

  // autoregressive
  for (int k = 0; k <= 5; ++k) add("autoregressive", "ar_coefficient", {{"coeff", k}, {"k", 5}});

  // nonlinear
  for (int k = 0; k <= 3; ++k) add("nonlinear", "friedrich_coefficients", {{"coeff", k}, {"m", 3}, {"r", 30}});
  add("nonlinear", "max_langevin_fixed_point", {{"m", 3}, {"r", 30}});

  // peaks
  for (int n : {1, 3, 5, 10}) add("peaks", "number_peaks", {{"n", n}});

  // boolean
  add("boolean", "has_duplicate");
  add("boolean", "has_duplicate_max");
  add("boolean", "has_duplicate_min");

  // stationarity
  add("stationarity", "augmented_dickey_fuller", {{"attr", "teststat"}});
  add("stationarity", "augmented_dickey_fuller", {{"attr", "pvalue"}});

  // similarity: needs a query motif, which no window provides
  add("similarity", "query_similarity_count", {{"query", nullptr}});

  // other
  add("other", "longest_strike_above_mean");
  add("other", "longest_strike_below_mean");
  add("other", "mean_second_derivative_central");
  add("other", "time_reversal_asymmetry_statistic", {{"lag", 1}});
  add("other", "c3", {{"lag", 1}});
  add("other", "first_location_of_maximum");
  add("other", "last_location_of_maximum");
  add("other", "first_location_of_minimum");
  add("other", "last_location_of_minimum");
  add("other", "mean_change");
  add("other", "ratio_value_number_to_time_series_length");
  return c;
}

FeatureCatalog FeatureCatalog::from_json(const io::Json& j) {
  try {
    FeatureCatalog c;
    c.version = j.at("version").get<std::string>();
    std::set<std::string> seen;
    for (const auto& e : j.at("features")) {
      FeatureDef d;
      d.name = e.at("name").get<std::string>();
      d.family = e.at("family").get<std::string>();
      d.kind = e.at("kind").get<std::string>();
      if (e.contains("params")) d.params = e["params"];
      if (std::find(kFeatureFamilies.begin(), kFeatureFamilies.end(), d.family) == kFeatureFamilies.end()) {
        throw ValidationError("catalog: unknown family '" + d.family + "'");
      }
      if (!seen.insert(d.name).second) throw ValidationError("catalog: duplicate feature '" + d.name + "'");
      c.features.push_back(std::move(d));
    }
    return c;
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("catalog: ") + e.what());
  }
}

FeatureCatalog FeatureCatalog::load(const std::filesystem::path& path) { return from_json(io::read_json(path)); }

io::Json FeatureCatalog::to_json() const {
  io::Json j;
  j["version"] = version;
  j["features"] = io::Json::array();
  for (const auto& d : features) {
    j["features"].push_back({{"name", d.name}, {"family", d.family}, {"kind", d.kind}, {"params", d.params}});
  }
  return j;
}

std::vector<std::string> FeatureCatalog::names() const {
  std::vector<std::string> out;
  out.reserve(features.size());
  for (const auto& d : features) out.push_back(d.name);
  return out;
}

namespace {

// Lazily computed quantities shared by several features of one series.
class SeriesContext {
 public:
  SeriesContext(std::span<const double> x, double rate) : x_(x), rate_(rate) {}

  std::span<const double> x() const { return x_; }
  std::size_t n() const { return x_.size(); }
  double rate() const { return rate_; }

  double mean() {
    if (!mean_) mean_ = stats::mean(x_);
    return *mean_;
  }
  double std() {
    if (!std_) std_ = stats::stddev(x_);
    return *std_;
  }
  const std::vector<double>& sorted() {
    if (sorted_.empty()) {
      sorted_.assign(x_.begin(), x_.end());
      std::sort(sorted_.begin(), sorted_.end());
    }
    return sorted_;
  }
  const std::vector<std::complex<double>>& spectrum() {
    if (spectrum_.empty()) spectrum_ = fmath::rfft(x_);
    return spectrum_;
  }
  const std::pair<std::vector<double>, std::vector<double>>& welch() {
    if (welch_.first.empty()) welch_ = fmath::welch(x_, rate_);
    return welch_;
  }
  const std::vector<double>& cwt(int width) {
    auto it = cwt_.find(width);
    if (it == cwt_.end()) it = cwt_.emplace(width, fmath::cwt_ricker(x_, width)).first;
    return it->second;
  }
  const fmath::LinearFit& trend() {
    if (!trend_) trend_ = fmath::linear_trend(x_);
    return *trend_;
  }
  const std::vector<double>& pacf(std::size_t lags) {
    if (pacf_.size() < lags) pacf_ = fmath::partial_autocorrelation(x_, lags);
    return pacf_;
  }
  const std::vector<double>& ar(int order) {
    auto it = ar_.find(order);
    if (it == ar_.end()) it = ar_.emplace(order, fmath::ar_coefficients(x_, order)).first;
    return it->second;
  }
  const std::vector<double>& friedrich(int m, int r) {
    const int key = m * 1000 + r;
    auto it = friedrich_.find(key);
    if (it == friedrich_.end()) it = friedrich_.emplace(key, fmath::friedrich_coefficients(x_, m, r)).first;
    return it->second;
  }
  const fmath::AdfResult& adf() {
    if (!adf_) adf_ = fmath::augmented_dickey_fuller(x_);
    return *adf_;
  }
  const fmath::LinearFit* agg_trend(std::size_t chunk, const std::string& f_agg) {
    const std::string key = std::to_string(chunk) + f_agg;
    auto it = agg_trend_.find(key);
    if (it == agg_trend_.end()) {
      std::optional<fmath::LinearFit> fit;
      const std::size_t chunks = chunk == 0 ? 0 : n() / chunk;
      if (chunks >= 3) {
        std::vector<double> agg(chunks);
        for (std::size_t c = 0; c < chunks; ++c) {
          auto part = x_.subspan(c * chunk, chunk);
          agg[c] = f_agg == "var" ? stats::variance(part) : stats::mean(part);
        }
        fit = fmath::linear_trend(agg);
      }
      it = agg_trend_.emplace(key, fit).first;
    }
    return it->second ? &*it->second : nullptr;
  }

 private:
  std::span<const double> x_;
  double rate_;
  std::optional<double> mean_, std_;
  std::vector<double> sorted_;
  std::vector<std::complex<double>> spectrum_;
  std::pair<std::vector<double>, std::vector<double>> welch_;
  std::map<int, std::vector<double>> cwt_;
  std::optional<fmath::LinearFit> trend_;
  std::vector<double> pacf_;
  std::map<int, std::vector<double>> ar_;
  std::map<int, std::vector<double>> friedrich_;
  std::optional<fmath::AdfResult> adf_;
  std::map<std::string, std::optional<fmath::LinearFit>> agg_trend_;
};

double fit_attr(const fmath::LinearFit& f, const std::string& attr) {
  if (attr == "slope") return f.slope;
  if (attr == "intercept") return f.intercept;
  if (attr == "rvalue") return f.r;
  if (attr == "stderr") return f.stderr_slope;
  throw ValidationError("unknown linear-trend attribute '" + attr + "'");
}

double spectral_moment(const std::vector<double>& y, int moment) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += y[i] * std::pow(static_cast<double>(i), moment);
    den += y[i];
  }
  return num / den;
}

double fft_aggregated(SeriesContext& c, const std::string& type) {
  const auto& spec = c.spectrum();
  std::vector<double> y(spec.size());
  double total = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    y[i] = std::abs(spec[i]);
    total += y[i];
  }
  if (!(total > 0.0)) return kNaN;
  const double m1 = spectral_moment(y, 1);
  const double var = spectral_moment(y, 2) - m1 * m1;
  if (type == "centroid") return m1;
  if (type == "variance") return var;
  if (var < 0.5) return kNaN;
  if (type == "skew") return (spectral_moment(y, 3) - 3 * m1 * var - m1 * m1 * m1) / std::pow(var, 1.5);
  if (type == "kurtosis") {
    return (spectral_moment(y, 4) - 4 * m1 * spectral_moment(y, 3) + 6 * spectral_moment(y, 2) * m1 * m1 -
            3 * std::pow(m1, 4)) /
           (var * var);
  }
  throw ValidationError("unknown fft aggregation '" + type + "'");
}

double number_cwt_peaks(SeriesContext& c, int width) {
  if (c.n() < 3) return kNaN;
  const auto& r = c.cwt(width);
  const double thr = stats::stddev(r);
  std::size_t count = 0;
  for (std::size_t i = 1; i + 1 < r.size(); ++i) {
    if (r[i] > r[i - 1] && r[i] > r[i + 1] && r[i] > thr) ++count;
  }
  return static_cast<double>(count);
}

double change_quantiles(SeriesContext& c, double ql, double qh, bool isabs, const std::string& f_agg) {
  const auto& s = c.sorted();
  const double lo = stats::quantile_sorted(s, ql);
  const double hi = stats::quantile_sorted(s, qh);
  auto x = c.x();
  std::vector<double> d;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const bool a = x[i - 1] > lo && x[i - 1] <= hi;
    const bool b = x[i] > lo && x[i] <= hi;
    if (a && b) d.push_back(isabs ? std::abs(x[i] - x[i - 1]) : x[i] - x[i - 1]);
  }
  if (d.empty()) return 0.0;
  return f_agg == "var" ? stats::variance(d) : stats::mean(d);
}

double compute_one(const FeatureDef& def, SeriesContext& c) {
  const auto& p = def.params;
  const std::string& k = def.kind;
  auto x = c.x();
  const std::size_t n = c.n();
  if (n == 0) return kNaN;
  auto num = [&](const char* key) { return p.at(key).get<double>(); };
  auto integer = [&](const char* key) { return p.at(key).get<int>(); };
  auto str = [&](const char* key) { return p.at(key).get<std::string>(); };

  if (k == "fft_coefficient") {
    const auto coeff = static_cast<std::size_t>(integer("coeff"));
    const auto& spec = c.spectrum();
    if (coeff >= spec.size()) return kNaN;
    const std::string attr = str("attr");
    const auto z = spec[coeff];
    if (attr == "abs") return std::abs(z);
    if (attr == "real") return z.real();
    if (attr == "imag") return z.imag();
    if (attr == "angle") return std::arg(z) * 180.0 / 3.14159265358979323846;
    throw ValidationError("unknown fft attribute '" + attr + "'");
  }
  if (k == "fft_aggregated") return fft_aggregated(c, str("aggtype"));
  if (k == "fourier_entropy") {
    if (n < 2) return kNaN;
    auto psd = c.welch().second;
    const double mx = *std::max_element(psd.begin(), psd.end());
    if (!(mx > 0.0)) return kNaN;
    for (auto& v : psd) v /= mx;
    return fmath::binned_entropy(psd, integer("bins"));
  }
  if (k == "welch_band_power") {
    if (n < 2) return kNaN;
    const auto& [freqs, psd] = c.welch();
    const int bands = integer("bands"), band = integer("band");
    const double nyq = 0.5 * c.rate();
    const double lo = nyq * band / bands, hi = nyq * (band + 1) / bands;
    const double df = freqs.size() > 1 ? freqs[1] - freqs[0] : 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < freqs.size(); ++i) {
      const bool in = freqs[i] >= lo && (freqs[i] < hi || (band == bands - 1 && freqs[i] <= hi));
      if (in) acc += psd[i] * df;
    }
    return acc;
  }
  if (k == "energy_ratio_by_chunks") {
    const auto segments = static_cast<std::size_t>(integer("num_segments"));
    const auto focus = static_cast<std::size_t>(integer("segment_focus"));
    if (n < segments) return kNaN;
    double total = 0.0;
    for (double v : x) total += v * v;
    if (!(total > 0.0)) return kNaN;
    // Same split as numpy.array_split: the first n % segments chunks get one extra.
    const std::size_t base = n / segments, extra = n % segments;
    const std::size_t begin = focus * base + std::min(focus, extra);
    const std::size_t len = base + (focus < extra ? 1 : 0);
    double part = 0.0;
    for (std::size_t i = begin; i < begin + len; ++i) part += x[i] * x[i];
    return part / total;
  }
  if (k == "quantile") return stats::quantile_sorted(c.sorted(), num("q"));
  if (k == "index_mass_quantile") {
    double total = 0.0;
    for (double v : x) total += std::abs(v);
    if (!(total > 0.0)) return kNaN;
    const double q = num("q");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += std::abs(x[i]);
      if (acc / total >= q) return static_cast<double>(i + 1) / static_cast<double>(n);
    }
    return 1.0;
  }
  if (k == "change_quantiles") return change_quantiles(c, num("ql"), num("qh"), p.at("isabs").get<bool>(), str("f_agg"));
  if (k == "binned_entropy") return fmath::binned_entropy(x, integer("max_bins"));
  if (k == "cwt_coefficients") {
    const int w = integer("width");
    if (n < 2) return kNaN;
    const auto& r = c.cwt(w);
    if (str("stat") == "std") return stats::stddev(r);
    double acc = 0.0;
    for (double v : r) acc += std::abs(v);
    return acc / static_cast<double>(r.size());
  }
  if (k == "number_cwt_peaks") return number_cwt_peaks(c, integer("width"));
  if (k == "linear_trend") {
    if (n < 3) return kNaN;
    return fit_attr(c.trend(), str("attr"));
  }
  if (k == "agg_linear_trend") {
    const auto chunk = static_cast<std::size_t>(std::llround(num("chunk_s") * c.rate()));
    const auto* fit = c.agg_trend(chunk, str("f_agg"));
    return fit ? fit_attr(*fit, str("attr")) : kNaN;
  }
  if (k == "autocorrelation") {
    const auto lag = static_cast<std::size_t>(integer("lag"));
    if (n <= 2 * lag) return kNaN;
    return fmath::autocorrelation(x, lag);
  }
  if (k == "agg_autocorrelation") {
    const auto maxlag = static_cast<std::size_t>(integer("maxlag"));
    if (n <= 2 * maxlag) return kNaN;
    std::vector<double> acf;
    for (std::size_t l = 1; l <= maxlag; ++l) acf.push_back(fmath::autocorrelation(x, l));
    if (std::isnan(acf[0])) return kNaN;
    return str("f_agg") == "var" ? stats::variance(acf) : stats::mean(acf);
  }
  if (k == "partial_autocorrelation") {
    const auto lag = static_cast<std::size_t>(integer("lag"));
    if (n <= 2 * lag) return kNaN;
    return c.pacf(5 > lag ? 5 : lag)[lag - 1];
  }
  if (k == "count_above_mean" || k == "count_below_mean") {
    const double m = c.mean();
    const bool above = k == "count_above_mean";
    return static_cast<double>(std::count_if(x.begin(), x.end(), [&](double v) { return above ? v > m : v < m; }));
  }
  if (k == "range_count") {
    const double lo = num("min"), hi = num("max");
    return static_cast<double>(std::count_if(x.begin(), x.end(), [&](double v) { return v >= lo && v < hi; }));
  }
  if (k == "number_crossing_m") {
    const double m = p.at("m").is_string() ? c.mean() : num("m");
    return static_cast<double>(fmath::number_crossings(x, m));
  }
  if (k == "ratio_beyond_r_sigma") {
    const double m = c.mean(), s = c.std(), r = num("r");
    return static_cast<double>(std::count_if(x.begin(), x.end(), [&](double v) { return std::abs(v - m) > r * s; })) /
           static_cast<double>(n);
  }
  if (k == "value_count") {
    const double v0 = num("value");
    return static_cast<double>(std::count(x.begin(), x.end(), v0));
  }
  if (k == "approximate_entropy") return fmath::approximate_entropy(x, integer("m"), num("r") * c.std());
  if (k == "sample_entropy") return fmath::sample_entropy(x, integer("m"), num("r") * c.std());
  if (k == "permutation_entropy") return fmath::permutation_entropy(x, integer("dimension"), integer("tau"));
  if (k == "lempel_ziv_complexity") return fmath::lempel_ziv_complexity(x, integer("bins"));
  if (k == "cid_ce") return fmath::cid_ce(x, p.at("normalize").get<bool>());
  if (k == "mean") return c.mean();
  if (k == "median") return stats::quantile_sorted(c.sorted(), 0.5);
  if (k == "variance") return c.std() * c.std();
  if (k == "standard_deviation") return c.std();
  if (k == "skewness") return fmath::skewness(x);
  if (k == "kurtosis") return fmath::kurtosis(x);
  if (k == "minimum") return c.sorted().front();
  if (k == "maximum") return c.sorted().back();
  if (k == "abs_energy") {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return acc;
  }
  if (k == "mean_abs_change") {
    if (n < 2) return kNaN;
    double acc = 0.0;
    for (std::size_t i = 1; i < n; ++i) acc += std::abs(x[i] - x[i - 1]);
    return acc / static_cast<double>(n - 1);
  }
  if (k == "ar_coefficient") {
    const auto& ar = c.ar(integer("k"));
    const auto coeff = static_cast<std::size_t>(integer("coeff"));
    return coeff < ar.size() ? ar[coeff] : kNaN;
  }
  if (k == "friedrich_coefficients") {
    const auto& fc = c.friedrich(integer("m"), integer("r"));
    const auto coeff = static_cast<std::size_t>(integer("coeff"));
    return coeff < fc.size() ? fc[coeff] : kNaN;
  }
  if (k == "max_langevin_fixed_point") return fmath::max_langevin_fixed_point(x, integer("m"), integer("r"));
  if (k == "number_peaks") return static_cast<double>(fmath::number_peaks(x, static_cast<std::size_t>(integer("n"))));
  if (k == "has_duplicate") {
    const auto& s = c.sorted();
    return std::adjacent_find(s.begin(), s.end()) != s.end() ? 1.0 : 0.0;
  }
  if (k == "has_duplicate_max" || k == "has_duplicate_min") {
    const auto& s = c.sorted();
    const double target = k == "has_duplicate_max" ? s.back() : s.front();
    return std::count(s.begin(), s.end(), target) >= 2 ? 1.0 : 0.0;
  }
  if (k == "augmented_dickey_fuller") {
    const auto& r = c.adf();
    return str("attr") == "pvalue" ? r.p_value : r.statistic;
  }
  if (k == "query_similarity_count") return kNaN;
  if (k == "longest_strike_above_mean" || k == "longest_strike_below_mean") {
    return static_cast<double>(fmath::longest_strike(x, c.mean(), k == "longest_strike_above_mean"));
  }
  if (k == "mean_second_derivative_central") {
    if (n < 3) return kNaN;
    return (x[n - 1] - x[n - 2] - x[1] + x[0]) / (2.0 * static_cast<double>(n - 2));
  }
  if (k == "time_reversal_asymmetry_statistic" || k == "c3") {
    const auto lag = static_cast<std::size_t>(integer("lag"));
    if (2 * lag >= n) return kNaN;
    double acc = 0.0;
    const std::size_t m = n - 2 * lag;
    for (std::size_t t = 0; t < m; ++t) {
      const double a = x[t], b = x[t + lag], cc = x[t + 2 * lag];
      acc += k == "c3" ? cc * b * a : cc * cc * b - b * a * a;
    }
    return acc / static_cast<double>(m);
  }
  if (k == "first_location_of_maximum") {
    return static_cast<double>(std::max_element(x.begin(), x.end()) - x.begin()) / static_cast<double>(n);
  }
  if (k == "first_location_of_minimum") {
    return static_cast<double>(std::min_element(x.begin(), x.end()) - x.begin()) / static_cast<double>(n);
  }
  if (k == "last_location_of_maximum" || k == "last_location_of_minimum") {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (k == "last_location_of_maximum" ? x[i] >= x[idx] : x[i] <= x[idx]) idx = i;
    }
    return static_cast<double>(idx + 1) / static_cast<double>(n);
  }
  if (k == "mean_change") {
    if (n < 2) return kNaN;
    return (x[n - 1] - x[0]) / static_cast<double>(n - 1);
  }
  if (k == "ratio_value_number_to_time_series_length") {
    const auto& s = c.sorted();
    std::size_t distinct = s.empty() ? 0 : 1;
    for (std::size_t i = 1; i < s.size(); ++i) distinct += s[i] != s[i - 1];
    return static_cast<double>(distinct) / static_cast<double>(n);
  }
  throw ValidationError("unknown feature kind '" + k + "'");
}

}  // namespace

std::vector<double> compute_features(std::span<const double> x, double rate_hz, const FeatureCatalog& catalog) {
  for (double v : x) {
    if (!std::isfinite(v)) throw ValidationError("compute_features: non-finite input sample");
  }
  SeriesContext ctx(x, rate_hz);
  std::vector<double> out;
  out.reserve(catalog.size());
  for (const auto& def : catalog.features) {
    double v;
    try {
      v = compute_one(def, ctx);
    } catch (const io::Json::exception& e) {
      throw ValidationError("feature '" + def.name + "': bad parameters: " + e.what());
    }
    out.push_back(std::isfinite(v) ? v : kNaN);
  }
  return out;
}

WindowRef window_ref(const WindowSegment& w) {
  return {w.participant_id, w.group, w.phase_index, w.start_s, w.spec.length_s, w.labels};
}

FeatureVector extract_features(const WindowSegment& window, FeatureModality modality, const FeatureCatalog& catalog) {
  FeatureVector fv;
  fv.window = window_ref(window);
  fv.modality = modality;
  if (modality == FeatureModality::arousal) {
    fv.values = compute_features(window.arousal_grid, kArousalRateHz, catalog);
  } else {
    fv.values = compute_features(window.accel_grid, kAccelRateHz, catalog);
  }
  return fv;
}

std::vector<std::size_t> FeatureTable::columns_for(std::span<const FeatureModality> modalities) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (std::find(modalities.begin(), modalities.end(), columns[i].modality) != modalities.end()) out.push_back(i);
  }
  return out;
}

FeatureTable build_feature_table(std::span<const WindowSegment> windows, const FeatureCatalog& catalog,
                                 std::span<const FeatureModality> modalities, unsigned threads) {
  FeatureTable t;
  for (auto m : modalities) {
    for (const auto& d : catalog.features) t.columns.push_back({std::string(to_string(m)) + "__" + d.name, d.family, m});
  }
  t.windows.resize(windows.size());
  t.rows.resize(windows.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < windows.size(); i += stride) {
      t.windows[i] = window_ref(windows[i]);
      auto& row = t.rows[i];
      for (auto m : modalities) {
        auto fv = extract_features(windows[i], m, catalog);
        row.insert(row.end(), fv.values.begin(), fv.values.end());
      }
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1 || windows.size() < 2) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned k = 0; k < threads; ++k) {
      pool.emplace_back([&, k] {
        try {
          work(k, threads);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return t;
}

namespace {
const std::vector<std::string> kRefColumns = {"participant", "group", "phase", "start_s", "length_s",
                                              "label_early", "label_above", "label_phase", "label_bac"};
}

void write_feature_table(const FeatureTable& table, const std::filesystem::path& csv_path) {
  io::CsvWriter w(csv_path);
  std::vector<std::string> header = kRefColumns;
  for (const auto& c : table.columns) header.push_back(c.name);
  w.row(header);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& r = table.windows[i];
    std::vector<std::string> f = {r.participant_id,
                                  std::string(to_string(r.group)),
                                  std::to_string(r.phase_index),
                                  io::format_double(r.start_s),
                                  io::format_double(r.length_s),
                                  std::to_string(r.labels.early),
                                  std::to_string(r.labels.above),
                                  std::to_string(r.labels.phase),
                                  io::format_double(r.labels.bac)};
    for (double v : table.rows[i]) f.push_back(std::isnan(v) ? "" : io::format_double(v));
    w.row(f);
  }
  w.close();
}

FeatureTable read_feature_table(const std::filesystem::path& csv_path, const FeatureCatalog& catalog) {
  auto csv = io::read_csv(csv_path);
  if (csv.header.size() < kRefColumns.size() ||
      !std::equal(kRefColumns.begin(), kRefColumns.end(), csv.header.begin())) {
    throw IngestError(csv.path, 1, "not a feature table");
  }
  std::unordered_map<std::string, std::string> family;
  for (const auto& d : catalog.features) family[d.name] = d.family;
  FeatureTable t;
  for (std::size_t c = kRefColumns.size(); c < csv.header.size(); ++c) {
    const auto& name = csv.header[c];
    const auto sep = name.find("__");
    if (sep == std::string::npos) throw IngestError(csv.path, 1, "bad column name '" + name + "'");
    const auto fam = family.find(name.substr(sep + 2));
    if (fam == family.end()) throw IngestError(csv.path, 1, "column '" + name + "' is not in the catalog");
    t.columns.push_back({name, fam->second, parse_feature_modality(name.substr(0, sep))});
  }
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& f = csv.rows[i];
    try {
      WindowRef r;
      r.participant_id = f[0];
      r.group = parse_group(f[1]);
      r.phase_index = std::stoi(f[2]);
      r.start_s = io::parse_double(f[3]);
      r.length_s = io::parse_double(f[4]);
      r.labels.early = std::stoi(f[5]);
      r.labels.above = std::stoi(f[6]);
      r.labels.phase = std::stoi(f[7]);
      r.labels.bac = io::parse_double(f[8]);
      std::vector<double> row;
      row.reserve(t.columns.size());
      for (std::size_t c = kRefColumns.size(); c < f.size(); ++c) row.push_back(io::parse_double(f[c]));
      t.windows.push_back(r);
      t.rows.push_back(std::move(row));
    } catch (const IngestError&) {
      throw;
    } catch (const std::exception& e) {
      throw IngestError(csv.path, io::CsvTable::file_row(i), e.what());
    }
  }
  return t;
}

DesignStats fit_design(const FeatureTable& table, std::span<const std::size_t> train_rows,
                       std::span<const std::size_t> columns, ImputeMode impute, double max_missing) {
  if (train_rows.empty()) throw ValidationError("fit_design: empty feature list");
  DesignStats st;
  st.impute = impute;
  st.max_missing = max_missing;
  st.source_columns.assign(columns.begin(), columns.end());
  std::vector<double> vals;
  for (std::size_t c : columns) {
    vals.clear();
    for (std::size_t r : train_rows) {
      const double v = table.rows[r][c];
      if (!std::isnan(v)) vals.push_back(v);
    }
    const double missing = 1.0 - static_cast<double>(vals.size()) / static_cast<double>(train_rows.size());
    if (missing > max_missing || vals.empty()) {
      st.dropped.push_back(c);
      continue;
    }
    st.kept.push_back(c);
    st.medians.push_back(stats::median(vals));
  }
  // Mean and scale of the imputed (or row-filtered) training column.
  std::vector<char> row_ok(train_rows.size(), 1);
  if (impute == ImputeMode::drop) {
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
      for (std::size_t c : st.kept) {
        if (std::isnan(table.rows[train_rows[i]][c])) {
          row_ok[i] = 0;
          break;
        }
      }
    }
    if (std::find(row_ok.begin(), row_ok.end(), 1) == row_ok.end()) {
      throw ValidationError("fit_design: every training row has a missing value");
    }
  }
  for (std::size_t k = 0; k < st.kept.size(); ++k) {
    vals.clear();
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
      if (!row_ok[i]) continue;
      const double v = table.rows[train_rows[i]][st.kept[k]];
      vals.push_back(std::isnan(v) ? st.medians[k] : v);
    }
    const double m = stats::mean(vals);
    const double s = stats::stddev(vals);
    st.means.push_back(m);
    st.scales.push_back(s > 0.0 ? s : 1.0);
  }
  return st;
}

DesignMatrix apply_design(const DesignStats& st, const FeatureTable& table, std::span<const std::size_t> rows) {
  DesignMatrix dm;
  for (std::size_t r : rows) {
    std::vector<double> x(st.kept.size());
    bool ok = true;
    for (std::size_t k = 0; k < st.kept.size(); ++k) {
      double v = table.rows[r][st.kept[k]];
      if (std::isnan(v)) {
        if (st.impute == ImputeMode::drop) {
          ok = false;
          break;
        }
        v = st.medians[k];
      }
      x[k] = (v - st.means[k]) / st.scales[k];
    }
    if (!ok) continue;
    dm.x.push_back(std::move(x));
    dm.rows.push_back(r);
  }
  return dm;
}

io::Json DesignStats::to_json(const FeatureTable& table) const {
  io::Json j;
  j["impute"] = impute == ImputeMode::median ? "median" : "drop";
  j["max_missing"] = max_missing;
  j["columns"] = io::Json::array();
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const auto& c = table.columns[kept[k]];
    j["columns"].push_back(
        {{"name", c.name}, {"family", c.family}, {"median", medians[k]}, {"mean", means[k]}, {"scale", scales[k]}});
  }
  j["dropped"] = io::Json::array();
  for (std::size_t c : dropped) j["dropped"].push_back(table.columns[c].name);
  return j;
}

}  // namespace impairdetect
