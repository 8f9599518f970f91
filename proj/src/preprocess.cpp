#include "impairdetect/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "impairdetect/stats.hpp"

namespace impairdetect {

SampleSeries remove_outliers(const SampleSeries& series, const OutlierConfig& config) {
  SampleSeries out{series.modality, {}};
  out.samples.reserve(series.size());
  if (series.modality == Modality::ibi_ms) {
    double prev = 0.0;
    bool have_prev = false;
    for (const auto& s : series.samples) {
      if (s.value < config.ibi_min_ms || s.value > config.ibi_max_ms) continue;
      const bool jump = have_prev && std::abs(s.value - prev) / prev > config.ibi_max_relative_diff;
      prev = s.value;
      have_prev = true;
      if (!jump) out.samples.push_back(s);
    }
  } else if (series.modality == Modality::hr_bpm) {
    for (const auto& s : series.samples) {
      if (s.value >= config.hr_min_bpm && s.value <= config.hr_max_bpm) out.samples.push_back(s);
    }
  } else {
    throw ValidationError("remove_outliers: modality must be ibi_ms or hr_bpm, got " +
                          std::string(to_string(series.modality)));
  }
  return out;
}

namespace {

NormStats fit_stats(std::span<const double> values, int phase_index) {
  if (values.size() < 2) throw ValidationError("zscore_normalize: need at least 2 samples in scope");
  NormStats st;
  st.phase_index = phase_index;
  st.mean = stats::mean(values);
  st.std = stats::stddev(values);
  if (!(st.std > 0.0)) {
    st.std = 1.0;
    st.zero_variance = true;
  }
  return st;
}

}  // namespace

SampleSeries apply_norm(const SampleSeries& series, const NormStats& st) {
  SampleSeries out = series;
  for (auto& s : out.samples) s.value = (s.value - st.mean) / st.std;
  return out;
}

NormalizedSeries zscore_normalize(const SampleSeries& series, NormScope scope, std::span<const DrivingPhase> phases) {
  NormalizedSeries result;
  result.series.modality = series.modality;
  if (scope == NormScope::participant) {
    auto values = series.values();
    auto st = fit_stats(values, 0);
    result.series = apply_norm(series, st);
    result.stats.push_back(st);
    return result;
  }
  if (phases.empty()) throw ValidationError("zscore_normalize: participant_phase scope requires phases");
  for (const auto& ph : phases) {
    std::vector<double> values;
    for (const auto& s : series.samples) {
      if (ph.contains(s.t)) values.push_back(s.value);
    }
    result.stats.push_back(fit_stats(values, ph.index));
  }
  for (const auto& s : series.samples) {
    for (std::size_t p = 0; p < phases.size(); ++p) {
      if (phases[p].contains(s.t)) {
        const auto& st = result.stats[p];
        result.series.samples.push_back({s.t, (s.value - st.mean) / st.std});
        break;
      }
    }
  }
  return result;
}

const std::array<std::string_view, kArousalFeatureCount> kArousalFeatureNames = {
    "ibi_mean", "ibi_std", "ibi_median", "ibi_min", "ibi_max", "ibi_p20", "ibi_p80",
    "ibi_rmssd", "hr_mean", "hr_std", "hr_median", "hr_p20", "hr_p80"};

std::array<double, kArousalFeatureCount> ArousalFeatureRow::as_array() const {
  return {ibi_mean, ibi_std, ibi_median, ibi_min, ibi_max, ibi_p20, ibi_p80,
          ibi_rmssd, hr_mean, hr_std, hr_median, hr_p20, hr_p80};
}

std::vector<ArousalFeatureRow> compute_arousal_features(const SampleSeries& ibi, const SampleSeries& hr,
                                                        double window_s, double step_s) {
  if (ibi.empty() || hr.empty()) throw ValidationError("compute_arousal_features: empty input");
  if (!(window_s > 0.0) || !(step_s > 0.0)) throw ValidationError("compute_arousal_features: bad window");
  const auto& ib = ibi.samples;
  const auto& hb = hr.samples;
  const double first = std::floor(std::min(ib.front().t, hb.front().t));
  const double last = std::max(ib.back().t, hb.back().t);
  auto by_time = [](const Sample& a, double t) { return a.t < t; };

  std::vector<ArousalFeatureRow> rows;
  std::vector<double> iv, hv;
  for (std::size_t k = 0;; ++k) {
    const double start = first + static_cast<double>(k) * step_s;
    if (start > last) break;
    const double end = start + window_s;
    auto i0 = std::lower_bound(ib.begin(), ib.end(), start, by_time);
    auto i1 = std::lower_bound(i0, ib.end(), end, by_time);
    if (i1 - i0 < 3) continue;
    auto h0 = std::lower_bound(hb.begin(), hb.end(), start, by_time);
    auto h1 = std::lower_bound(h0, hb.end(), end, by_time);
    if (h1 == h0) continue;

    iv.clear();
    for (auto it = i0; it != i1; ++it) iv.push_back(it->value);
    hv.clear();
    for (auto it = h0; it != h1; ++it) hv.push_back(it->value);

    ArousalFeatureRow r;
    r.window_center = start + 0.5 * window_s;
    double ssd = 0.0;
    for (std::size_t i = 1; i < iv.size(); ++i) ssd += (iv[i] - iv[i - 1]) * (iv[i] - iv[i - 1]);
    r.ibi_rmssd = std::sqrt(ssd / static_cast<double>(iv.size() - 1));
    r.ibi_mean = stats::mean(iv);
    r.ibi_std = stats::stddev(iv);
    std::sort(iv.begin(), iv.end());
    r.ibi_min = iv.front();
    r.ibi_max = iv.back();
    r.ibi_median = stats::quantile_sorted(iv, 0.5);
    r.ibi_p20 = stats::quantile_sorted(iv, 0.2);
    r.ibi_p80 = stats::quantile_sorted(iv, 0.8);

    r.hr_mean = stats::mean(hv);
    r.hr_std = stats::stddev(hv);
    std::sort(hv.begin(), hv.end());
    r.hr_median = stats::quantile_sorted(hv, 0.5);
    r.hr_p20 = stats::quantile_sorted(hv, 0.2);
    r.hr_p80 = stats::quantile_sorted(hv, 0.8);
    rows.push_back(r);
  }
  return rows;
}

LogisticArousalSurrogate::LogisticArousalSurrogate(std::array<double, kArousalFeatureCount> weights, double bias)
    : weights_(weights), bias_(bias) {}

LogisticArousalSurrogate LogisticArousalSurrogate::from_json(const io::Json& j) {
  try {
    auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != kArousalFeatureCount) throw ValidationError("surrogate: expected 13 weights");
    std::vector<std::string> order(kArousalFeatureNames.begin(), kArousalFeatureNames.end());
    if (j.contains("feature_order")) order = j["feature_order"].get<std::vector<std::string>>();
    if (order.size() != kArousalFeatureCount) throw ValidationError("surrogate: feature_order must list 13 names");
    std::array<double, kArousalFeatureCount> mapped{};
    std::array<bool, kArousalFeatureCount> seen{};
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto it = std::find(kArousalFeatureNames.begin(), kArousalFeatureNames.end(), order[i]);
      if (it == kArousalFeatureNames.end()) throw ValidationError("surrogate: unknown feature '" + order[i] + "'");
      const auto k = static_cast<std::size_t>(it - kArousalFeatureNames.begin());
      if (seen[k]) throw ValidationError("surrogate: duplicate feature '" + order[i] + "'");
      seen[k] = true;
      mapped[k] = w[i];
    }
    return LogisticArousalSurrogate(mapped, j.at("bias").get<double>());
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("surrogate: ") + e.what());
  }
}

LogisticArousalSurrogate LogisticArousalSurrogate::load(const std::filesystem::path& path) {
  return from_json(io::read_json(path));
}

io::Json LogisticArousalSurrogate::to_json() const {
  io::Json j;
  j["weights"] = std::vector<double>(weights_.begin(), weights_.end());
  j["bias"] = bias_;
  j["feature_order"] = std::vector<std::string>(kArousalFeatureNames.begin(), kArousalFeatureNames.end());
  return j;
}

double LogisticArousalSurrogate::predict(const ArousalFeatureRow& row) const {
  const auto x = row.as_array();
  double z = bias_;
  for (std::size_t i = 0; i < kArousalFeatureCount; ++i) z += weights_[i] * x[i];
  return 1.0 / (1.0 + std::exp(-z));
}

LogisticArousalSurrogate default_arousal_surrogate() {
  return LogisticArousalSurrogate({-0.6, -0.5, -0.4, 0.0, 0.0, 0.0, 0.0, -1.5, 0.6, 0.0, 0.4, 0.0, 0.0}, 1.6);
}

SampleSeries estimate_arousal(std::span<const ArousalFeatureRow> rows, const ArousalEstimator& estimator) {
  std::vector<const ArousalFeatureRow*> sorted;
  sorted.reserve(rows.size());
  for (const auto& r : rows) {
    for (double v : r.as_array()) {
      if (!std::isfinite(v)) throw ValidationError("estimate_arousal: non-finite feature value");
    }
    if (!std::isfinite(r.window_center)) throw ValidationError("estimate_arousal: non-finite timestamp");
    sorted.push_back(&r);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->window_center < b->window_center; });
  SampleSeries out{Modality::arousal_prob, {}};
  out.samples.reserve(sorted.size());
  for (const auto* r : sorted) {
    if (!out.samples.empty() && out.samples.back().t == r->window_center) {
      throw ValidationError("estimate_arousal: duplicate window center");
    }
    const double p = std::clamp(estimator.predict(*r), 0.0, 1.0);
    out.samples.push_back({r->window_center, p});
  }
  return out;
}

SampleSeries accel_magnitude(const SampleSeries& x, const SampleSeries& y, const SampleSeries& z,
                             std::size_t* unmatched) {
  SampleSeries out{Modality::accel_mag_g, {}};
  out.samples.reserve(std::min({x.size(), y.size(), z.size()}));
  std::size_t i = 0, j = 0, k = 0, skipped = 0;
  const auto& a = x.samples;
  const auto& b = y.samples;
  const auto& c = z.samples;
  while (i < a.size() && j < b.size() && k < c.size()) {
    const double t = std::max({a[i].t, b[j].t, c[k].t});
    if (a[i].t < t) { ++i; ++skipped; continue; }
    if (b[j].t < t) { ++j; ++skipped; continue; }
    if (c[k].t < t) { ++k; ++skipped; continue; }
    const double m = std::sqrt(a[i].value * a[i].value + b[j].value * b[j].value + c[k].value * c[k].value);
    out.samples.push_back({t, m});
    ++i; ++j; ++k;
  }
  skipped += (a.size() - i) + (b.size() - j) + (c.size() - k);
  if (unmatched) *unmatched = skipped;
  return out;
}

}  // namespace impairdetect
