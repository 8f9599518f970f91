#pragma once

#include <cstdint>
#include <filesystem>

#include "impairdetect/cohort.hpp"
#include "impairdetect/io.hpp"

namespace impairdetect {

enum class EffectProfile {
  bac_tracking,  // follows BAC(t), ramped in over onset_ramp_s
  phase_level,   // constant over each drive at the drive's mean BAC
};

/// Planted alcohol effect. Every term scales with BAC / reference_bac and
/// ramps in linearly over onset_ramp_s from each drive's start.
struct SynthEffect {
  /// Drop of the IBI mean, in units of the participant's IBI standard deviation.
  double arousal_shift = 2.0;
  /// Fractional reduction of IBI successive-difference variability. Realized by
  /// raising the AR(1) coefficient with the marginal variance held fixed.
  double hrv_reduction = 0.5;
  /// Multiplier of the high-frequency share of the acceleration magnitude;
  /// total deviation variance is preserved so only the spectrum changes.
  double accel_roughness = 3.0;
  double onset_ramp_s = 60.0;
  double reference_bac = 0.07;
  EffectProfile profile = EffectProfile::bac_tracking;

  /// All terms neutral.
  static SynthEffect none();
  /// Same direction, magnitude multiplied by k (k = 0 is none()).
  SynthEffect scaled(double k) const;

  io::Json to_json() const;
  static SynthEffect from_json(const io::Json& j);
};

struct SynthConfig {
  int n_treatment = 12;
  int n_placebo = 5;
  int n_reference = 5;
  double phase_duration_s = 2400.0;
  double phase_gap_s = 1800.0;
  /// Signals start this long before each drive so the first arousal windows are warm.
  double recording_lead_s = 60.0;
  SynthEffect effect;
  // BAC ranges per phase (start drawn in the upper part, linear decay to the end value).
  double severe_bac_min = 0.054, severe_bac_max = 0.086;
  double moderate_bac_min = 0.014, moderate_bac_max = 0.044;
  // Noise and heterogeneity.
  double ibi_mean_min_ms = 700.0, ibi_mean_max_ms = 1000.0;
  double ibi_sd_min_ms = 30.0, ibi_sd_max_ms = 60.0;
  double ibi_ar = 0.5;
  double hr_noise_bpm = 1.0;
  double accel_lf_sd_g = 0.04;
  double accel_hf_sd_g = 0.015;
  std::uint64_t seed = 0;

  /// Desk-scale cohort: 12 / 5 / 5 participants, 10-minute phases.
  static SynthConfig desk_default();

  void validate() const;
  io::Json to_json() const;
  static SynthConfig from_json(const io::Json& j);
};

/// Treatment participants: phase 1 sober, phase 2 in the severe range, phase 3
/// in the moderate range. Placebo and reference participants stay sober on the
/// same schedule. Each participant draws from its own seed derived from the
/// root seed, so the cohort is independent of generation order.
Cohort generate_cohort(const SynthConfig& config);

/// Generates and writes manifest.json plus CSVs.
Cohort generate_cohort(const SynthConfig& config, const std::filesystem::path& dir);

}  // namespace impairdetect
