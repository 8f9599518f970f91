#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "impairdetect/io.hpp"
#include "impairdetect/types.hpp"

namespace impairdetect {

struct OutlierConfig {
  double ibi_min_ms = 300.0;
  double ibi_max_ms = 2000.0;
  double ibi_max_relative_diff = 0.5;
  double hr_min_bpm = 30.0;
  double hr_max_bpm = 220.0;
};

/// IBI: physiological bounds, then a successive-difference filter relative to
/// the preceding in-bounds beat. HR: physiological bounds only.
SampleSeries remove_outliers(const SampleSeries& series, const OutlierConfig& config = {});

enum class NormScope { participant, participant_phase };

struct NormStats {
  int phase_index = 0;  // 0 for participant scope
  double mean = 0.0;
  double std = 1.0;
  bool zero_variance = false;
};

struct NormalizedSeries {
  SampleSeries series;
  std::vector<NormStats> stats;  // one per scope unit
};

/// (x - mean) / std per participant or per participant and phase (population
/// std). A constant scope is centered and flagged. Under participant_phase
/// scope, samples outside every phase are dropped.
NormalizedSeries zscore_normalize(const SampleSeries& series, NormScope scope,
                                  std::span<const DrivingPhase> phases = {});

/// Applies previously computed statistics (e.g. from a training fold).
SampleSeries apply_norm(const SampleSeries& series, const NormStats& stats);

inline constexpr std::size_t kArousalFeatureCount = 13;
extern const std::array<std::string_view, kArousalFeatureCount> kArousalFeatureNames;

struct ArousalFeatureRow {
  double window_center = 0.0;
  double ibi_mean = 0, ibi_std = 0, ibi_median = 0, ibi_min = 0, ibi_max = 0, ibi_p20 = 0, ibi_p80 = 0, ibi_rmssd = 0;
  double hr_mean = 0, hr_std = 0, hr_median = 0, hr_p20 = 0, hr_p80 = 0;

  std::array<double, kArousalFeatureCount> as_array() const;
};

/// Sliding windows [s, s + window) with s stepping from floor(first beat).
/// Windows with fewer than 3 IBI samples or no HR sample are skipped.
std::vector<ArousalFeatureRow> compute_arousal_features(const SampleSeries& ibi, const SampleSeries& hr,
                                                        double window_s = 60.0, double step_s = 1.0);

class ArousalEstimator {
 public:
  virtual ~ArousalEstimator() = default;
  /// Probability in [0, 1] for finite input.
  virtual double predict(const ArousalFeatureRow& row) const = 0;
  virtual std::string name() const = 0;
  virtual std::string version() const = 0;
};

/// Stand-in for the pretrained arousal model: logistic regression over the 13
/// short-window statistics with weights read from JSON.
class LogisticArousalSurrogate final : public ArousalEstimator {
 public:
  LogisticArousalSurrogate() = default;
  LogisticArousalSurrogate(std::array<double, kArousalFeatureCount> weights, double bias);

  static LogisticArousalSurrogate from_json(const io::Json& j);
  static LogisticArousalSurrogate load(const std::filesystem::path& path);
  io::Json to_json() const;

  double predict(const ArousalFeatureRow& row) const override;
  std::string name() const override { return "logistic-surrogate"; }
  std::string version() const override { return "1"; }

  const std::array<double, kArousalFeatureCount>& weights() const { return weights_; }
  double bias() const { return bias_; }

 private:
  std::array<double, kArousalFeatureCount> weights_{};
  double bias_ = 0.0;
};

/// Weights shipped as data/surrogate_arousal.json.
LogisticArousalSurrogate default_arousal_surrogate();

/// One probability per row at the row's window center, sorted by time.
SampleSeries estimate_arousal(std::span<const ArousalFeatureRow> rows, const ArousalEstimator& estimator);

/// sqrt(x^2 + y^2 + z^2) after an exact-timestamp join; counts unmatched samples.
SampleSeries accel_magnitude(const SampleSeries& x, const SampleSeries& y, const SampleSeries& z,
                             std::size_t* unmatched = nullptr);

}  // namespace impairdetect
