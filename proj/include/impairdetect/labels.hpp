#pragma once

#include <span>
#include <vector>

#include "impairdetect/cohort.hpp"
#include "impairdetect/windowing.hpp"

namespace impairdetect {

inline constexpr double kBreathToBloodFactor = 0.2;
inline constexpr double kEarlyThreshold = 0.00;  // g/dL
inline constexpr double kAboveThreshold = 0.05;  // g/dL

/// mg/L breath alcohol to g/dL blood alcohol.
double brac_to_bac(double brac_mg_per_l);

/// Piecewise-linear in time, nearest-value outside the measured range.
/// Measurements must be sorted by timestamp.
double interpolate_bac(std::span<const BacMeasurement> measurements, double t);

/// Label for one task. Binary tasks follow the phase-level intoxication state
/// of the participant's group; regression uses BAC at the window center.
TaskLabel assign_label(const WindowSegment& window, Task task, const ParticipantRecord& record);

/// Fills every task label in place.
void assign_labels(std::vector<WindowSegment>& windows, const ParticipantRecord& record);

}  // namespace impairdetect
