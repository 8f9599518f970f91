#include "impairdetect/labels.hpp"

#include <algorithm>
#include <cmath>

namespace impairdetect {

double brac_to_bac(double brac_mg_per_l) {
  if (!(brac_mg_per_l >= 0.0)) throw ValidationError("breath alcohol concentration must be >= 0");
  return brac_mg_per_l * kBreathToBloodFactor;
}

double interpolate_bac(std::span<const BacMeasurement> m, double t) {
  if (m.empty()) throw ValidationError("interpolate_bac: no measurements");
  if (t <= m.front().t) return m.front().bac_g_per_dl;
  if (t >= m.back().t) return m.back().bac_g_per_dl;
  auto hi = std::upper_bound(m.begin(), m.end(), t, [](double v, const BacMeasurement& b) { return v < b.t; });
  auto lo = hi - 1;
  if (hi->t == lo->t) return hi->bac_g_per_dl;
  const double w = (t - lo->t) / (hi->t - lo->t);
  return lo->bac_g_per_dl + w * (hi->bac_g_per_dl - lo->bac_g_per_dl);
}

TaskLabel assign_label(const WindowSegment& window, Task task, const ParticipantRecord& record) {
  const auto& phase = record.phase(window.phase_index);
  constexpr double eps = 1e-9;
  if (window.start_s < phase.start_s - eps || window.end_s() > phase.end_s + eps) {
    throw ValidationError("window at " + std::to_string(window.start_s) + " s spans a phase boundary");
  }
  const bool treated = record.participant.group == Group::treatment;
  TaskLabel label{task, 0.0};
  switch (task) {
    case Task::early_warning: label.value = treated && (phase.index == 2 || phase.index == 3) ? 1.0 : 0.0; break;
    case Task::above_limit: label.value = treated && phase.index == 2 ? 1.0 : 0.0; break;
    case Task::phase_categorical: label.value = phase.index; break;
    case Task::bac_regression:
      if (record.bac.empty()) {
        if (treated) throw ValidationError("no BAC measurements for treatment participant " + record.participant.id);
        label.value = 0.0;
      } else {
        label.value = interpolate_bac(record.bac, window.center_s());
      }
      break;
  }
  return label;
}

void assign_labels(std::vector<WindowSegment>& windows, const ParticipantRecord& record) {
  for (auto& w : windows) {
    w.labels.early = assign_label(w, Task::early_warning, record).as_int();
    w.labels.above = assign_label(w, Task::above_limit, record).as_int();
    w.labels.phase = assign_label(w, Task::phase_categorical, record).as_int();
    w.labels.bac = assign_label(w, Task::bac_regression, record).value;
  }
}

}  // namespace impairdetect
