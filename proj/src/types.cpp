#include "impairdetect/types.hpp"

#include <cmath>

namespace impairdetect {

IngestError::IngestError(std::string file, std::size_t row, const std::string& what)
    : ValidationError(file + ":" + std::to_string(row) + ": " + what), file_(std::move(file)), row_(row) {}

std::string_view to_string(Group g) {
  switch (g) {
    case Group::treatment: return "treatment";
    case Group::placebo: return "placebo";
    case Group::reference: return "reference";
  }
  return "?";
}

Group parse_group(std::string_view s) {
  if (s == "treatment") return Group::treatment;
  if (s == "placebo") return Group::placebo;
  if (s == "reference") return Group::reference;
  throw ValidationError("unknown group '" + std::string(s) + "'");
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::ibi_ms: return "ibi_ms";
    case Modality::hr_bpm: return "hr_bpm";
    case Modality::arousal_prob: return "arousal_prob";
    case Modality::accel_x_g: return "accel_x_g";
    case Modality::accel_y_g: return "accel_y_g";
    case Modality::accel_z_g: return "accel_z_g";
    case Modality::accel_mag_g: return "accel_mag_g";
  }
  return "?";
}

std::string_view to_string(Task t) {
  switch (t) {
    case Task::early_warning: return "early_warning";
    case Task::above_limit: return "above_limit";
    case Task::phase_categorical: return "phase_categorical";
    case Task::bac_regression: return "bac_regression";
  }
  return "?";
}

Task parse_task(std::string_view s) {
  if (s == "early" || s == "early_warning") return Task::early_warning;
  if (s == "above" || s == "above_limit") return Task::above_limit;
  if (s == "phase" || s == "phase_categorical") return Task::phase_categorical;
  if (s == "bac" || s == "bac_regression") return Task::bac_regression;
  throw ValidationError("unknown task '" + std::string(s) + "'");
}

std::vector<double> SampleSeries::values() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.value);
  return out;
}

std::vector<double> SampleSeries::times() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.t);
  return out;
}

void SampleSeries::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!std::isfinite(s.t) || !std::isfinite(s.value)) {
      throw ValidationError(std::string(to_string(modality)) + ": non-finite sample at index " + std::to_string(i));
    }
    if (i > 0 && !(s.t > samples[i - 1].t)) {
      throw ValidationError(std::string(to_string(modality)) + ": timestamps not strictly increasing at index " +
                            std::to_string(i));
    }
    bool ok = true;
    switch (modality) {
      case Modality::arousal_prob: ok = s.value >= 0.0 && s.value <= 1.0; break;
      case Modality::ibi_ms:
      case Modality::hr_bpm: ok = s.value > 0.0; break;
      default: break;
    }
    if (!ok) {
      throw ValidationError(std::string(to_string(modality)) + ": value out of domain at index " + std::to_string(i));
    }
  }
}

}  // namespace impairdetect
