#include "impairdetect/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace impairdetect {

WindowSpec WindowSpec::feature_default() { return {180.0, 45.0, 0.5, Pipeline::feature}; }

WindowSpec WindowSpec::cnn_default() { return {180.0, 15.0, 1.0 / 3.0, Pipeline::cnn}; }

WindowSpec WindowSpec::quarter_step(double length_s) { return {length_s, length_s / 4.0, 0.5, Pipeline::feature}; }

void WindowSpec::validate() const {
  if (!(length_s > 0.0)) throw ValidationError("window length must be positive");
  if (!(step_s > 0.0) || step_s > length_s) throw ValidationError("window step must be in (0, length]");
  if (!(min_coverage > 0.0) || min_coverage > 1.0) throw ValidationError("min_coverage must be in (0, 1]");
  const double accel_n = length_s * kAccelRateHz;
  if (std::abs(accel_n - std::round(accel_n)) > 1e-9 || std::abs(length_s - std::round(length_s)) > 1e-9) {
    throw ValidationError("window length must be a whole number of seconds");
  }
}

double WindowLabels::value(Task t) const {
  switch (t) {
    case Task::early_warning: return early;
    case Task::above_limit: return above;
    case Task::phase_categorical: return phase;
    case Task::bac_regression: return bac;
  }
  return 0.0;
}

ResampledGrid resample_to_grid(const SampleSeries& series, double start_s, double length_s, double rate_hz) {
  if (!(rate_hz > 0.0)) throw ValidationError("rate must be positive");
  const auto n = static_cast<std::size_t>(std::llround(length_s * rate_hz));
  ResampledGrid grid;
  grid.values.assign(n, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  const double half = 0.5 / rate_hz;
  const auto& s = series.samples;
  auto it = std::lower_bound(s.begin(), s.end(), start_s - half, [](const Sample& a, double t) { return a.t < t; });
  std::size_t filled = 0;
  for (; it != s.end(); ++it) {
    const double pos = (it->t - start_s) * rate_hz + 0.5;
    if (pos < 0.0) continue;
    const auto k = static_cast<std::size_t>(std::floor(pos));
    if (k >= n) break;
    const double dist = std::abs(it->t - (start_s + static_cast<double>(k) / rate_hz));
    if (dist < best[k]) {
      if (std::isnan(grid.values[k])) ++filled;
      best[k] = dist;
      grid.values[k] = it->value;
    }
  }
  grid.coverage = n == 0 ? 0.0 : static_cast<double>(filled) / static_cast<double>(n);
  return grid;
}

std::vector<double> impute(std::vector<double> grid) {
  const std::size_t n = grid.size();
  std::size_t first = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isnan(grid[i])) {
      first = i;
      break;
    }
  }
  if (first == n) throw ValidationError("cannot impute an all-missing grid");
  for (std::size_t i = 0; i < first; ++i) grid[i] = grid[first];
  std::size_t prev = first;
  for (std::size_t i = first + 1; i < n; ++i) {
    if (std::isnan(grid[i])) continue;
    if (i > prev + 1) {
      const double a = grid[prev], b = grid[i];
      const double span = static_cast<double>(i - prev);
      for (std::size_t j = prev + 1; j < i; ++j) {
        const double w = static_cast<double>(j - prev) / span;
        grid[j] = a + (b - a) * w;
      }
    }
    prev = i;
  }
  for (std::size_t i = prev + 1; i < n; ++i) grid[i] = grid[prev];
  return grid;
}

std::size_t candidate_window_count(double phase_length_s, const WindowSpec& spec) {
  if (phase_length_s < spec.length_s) return 0;
  // Tolerance absorbs representation error in fractional steps such as 7.5 s.
  const double k = std::floor((phase_length_s - spec.length_s) / spec.step_s + 1e-9);
  return static_cast<std::size_t>(k) + 1;
}

std::vector<WindowSegment> segment(const SegmentInput& input, const WindowSpec& spec, SegmentStats* stats) {
  spec.validate();
  if (input.arousal == nullptr || input.accel == nullptr || input.phases == nullptr) {
    throw ValidationError("segment: arousal, accel and phases are required");
  }
  std::vector<WindowSegment> out;
  SegmentStats local;
  for (const auto& phase : *input.phases) {
    if (!(phase.end_s > phase.start_s)) throw ValidationError("segment: empty phase " + std::to_string(phase.index));
    const auto count = candidate_window_count(phase.duration(), spec);
    local.candidates += count;
    for (std::size_t k = 0; k < count; ++k) {
      const double start = phase.start_s + static_cast<double>(k) * spec.step_s;
      auto aro = resample_to_grid(*input.arousal, start, spec.length_s, kArousalRateHz);
      auto acc = resample_to_grid(*input.accel, start, spec.length_s, kAccelRateHz);
      // Compare with a small slack so that e.g. 60/180 passes a 1/3 gate.
      constexpr double slack = 1e-12;
      if (aro.coverage + slack < spec.min_coverage || acc.coverage + slack < spec.min_coverage) {
        ++local.dropped_coverage;
        continue;
      }
      WindowSegment w;
      w.participant_id = input.participant_id;
      w.group = input.group;
      w.phase_index = phase.index;
      w.start_s = start;
      w.spec = spec;
      w.arousal_coverage = aro.coverage;
      w.accel_coverage = acc.coverage;
      w.arousal_grid = impute(std::move(aro.values));
      w.accel_grid = impute(std::move(acc.values));
      out.push_back(std::move(w));
    }
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace impairdetect
