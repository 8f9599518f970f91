#pragma once

#include <string>
#include <vector>

#include "impairdetect/types.hpp"

namespace impairdetect {

enum class Pipeline { feature, cnn };

struct WindowSpec {
  double length_s = 180.0;
  double step_s = 45.0;
  double min_coverage = 0.5;
  Pipeline pipeline = Pipeline::feature;

  /// 180 s / 45 s, coverage 0.5.
  static WindowSpec feature_default();
  /// 180 s / 15 s, coverage 1/3.
  static WindowSpec cnn_default();
  /// Window sweep rule: step = length / 4, coverage 0.5.
  static WindowSpec quarter_step(double length_s);

  void validate() const;
};

inline constexpr double kArousalRateHz = 1.0;
inline constexpr double kAccelRateHz = 25.0;

struct WindowLabels {
  int early = 0;
  int above = 0;
  int phase = 0;  // 1..3
  double bac = 0.0;

  double value(Task t) const;
};

struct WindowSegment {
  std::string participant_id;
  Group group = Group::treatment;
  int phase_index = 1;
  double start_s = 0.0;
  WindowSpec spec;
  std::vector<double> arousal_grid;  // length_s * 1 Hz
  std::vector<double> accel_grid;    // length_s * 25 Hz
  double arousal_coverage = 0.0;
  double accel_coverage = 0.0;
  WindowLabels labels;

  double end_s() const { return start_s + spec.length_s; }
  double center_s() const { return start_s + 0.5 * spec.length_s; }
};

/// Grid with NaN marking bins that received no sample.
struct ResampledGrid {
  std::vector<double> values;
  double coverage = 0.0;  // filled / expected
};

/// Nearest-sample binning: grid point k sits at start + k / rate and collects
/// samples within half a bin, i.e. t in [g_k - h, g_k + h). The sample nearest
/// to the grid point wins (earlier sample on ties).
ResampledGrid resample_to_grid(const SampleSeries& series, double start_s, double length_s, double rate_hz);

/// Linear interpolation of interior gaps; leading gaps backward-filled and
/// trailing gaps forward-filled. Throws ValidationError when nothing is present.
std::vector<double> impute(std::vector<double> grid);

/// max(0, floor((phase_len - length) / step) + 1).
std::size_t candidate_window_count(double phase_length_s, const WindowSpec& spec);

struct SegmentInput {
  std::string participant_id;
  Group group = Group::treatment;
  const SampleSeries* arousal = nullptr;  // arousal_prob
  const SampleSeries* accel = nullptr;    // accel_mag_g
  const std::vector<DrivingPhase>* phases = nullptr;
};

struct SegmentStats {
  std::size_t candidates = 0;
  std::size_t dropped_coverage = 0;
};

/// Windows anchored at each phase start, emitted in (phase, start) order. A
/// window is kept iff both modalities reach the spec's coverage; kept grids are
/// imputed. Labels are left default; see assign_labels.
std::vector<WindowSegment> segment(const SegmentInput& input, const WindowSpec& spec, SegmentStats* stats = nullptr);

}  // namespace impairdetect
