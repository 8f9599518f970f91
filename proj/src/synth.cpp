#include "impairdetect/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "impairdetect/rng.hpp"

namespace impairdetect {

namespace {

double round_to(double v, double unit) { return std::round(v / unit) * unit; }

void check_keys(const io::Json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object()) throw ValidationError(std::string(what) + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ValidationError(std::string(what) + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read(const io::Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const io::Json::exception&) {
    throw ValidationError(std::string("synth config: bad value for '") + key + "'");
  }
}

/// Linear BAC course of one drive.
struct BacCourse {
  double start = 0.0, end = 0.0;
  double at(double frac) const { return start + (end - start) * frac; }
};

struct PhaseSchedule {
  DrivingPhase phase;
  BacCourse bac;
};

/// Effect strength in [0, ~1.2]: BAC relative to the reference, ramped in from the drive start.
double strength(const SynthEffect& e, const PhaseSchedule& ph, double t) {
  const double elapsed = t - ph.phase.start_s;
  if (elapsed <= 0) return 0.0;
  if (e.profile == EffectProfile::phase_level) return ph.bac.at(0.5) / e.reference_bac;
  const double frac = std::min(1.0, elapsed / ph.phase.duration());
  const double ramp = e.onset_ramp_s > 0 ? std::min(1.0, elapsed / e.onset_ramp_s) : 1.0;
  return ramp * ph.bac.at(frac) / e.reference_bac;
}

void generate_ibi_hr(const SynthConfig& cfg, const PhaseSchedule& ph, double base_ms, double sd_ms, Rng& rng,
                     ParticipantRecord& rec) {
  const double t0 = ph.phase.start_s - cfg.recording_lead_s, t1 = ph.phase.end_s;
  const auto& e = cfg.effect;
  double a = sd_ms * rng.normal();
  double t = t0;
  double current = base_ms;
  std::vector<Sample> beats;
  while (true) {
    const double s = strength(e, ph, t);
    const double ratio = std::max(0.05, 1.0 - e.hrv_reduction * s);
    const double phi = 1.0 - ratio * ratio * (1.0 - cfg.ibi_ar);
    a = phi * a + sd_ms * std::sqrt(std::max(0.0, 1.0 - phi * phi)) * rng.normal();
    const double ibi = std::clamp(round_to(base_ms - e.arousal_shift * sd_ms * s + a, 0.01), 350.0, 1900.0);
    if (t + ibi / 1000.0 > t1) break;
    t += ibi / 1000.0;
    beats.push_back({round_to(t, 1e-3), ibi});
  }
  // HR at 1 Hz from the interval in progress at each second.
  std::size_t k = 0;
  for (double s = std::ceil(t0); s <= t1; s += 1.0) {
    while (k < beats.size() && beats[k].t < s) current = beats[k++].value;
    if (k < beats.size()) current = beats[k].value;
    const double hr = round_to(60000.0 / current + cfg.hr_noise_bpm * rng.normal(), 0.01);
    rec.hr.samples.push_back({s, hr});
  }
  rec.ibi.samples.insert(rec.ibi.samples.end(), beats.begin(), beats.end());
}

void generate_accel(const SynthConfig& cfg, const PhaseSchedule& ph, double lf_sd, double hf_sd, Rng& rng,
                    ParticipantRecord& rec) {
  constexpr double rate = 25.0;
  const double t0 = ph.phase.start_s - cfg.recording_lead_s, t1 = ph.phase.end_s;
  const auto first = static_cast<long long>(std::ceil(t0 * rate));
  const auto last = static_cast<long long>(std::floor(t1 * rate));
  const auto& e = cfg.effect;
  // Steering-like low-frequency component (time constant ~2 s) plus a weakly
  // correlated high-frequency component; both unit variance before scaling.
  const double phi_lf = 0.98, phi_hf = 0.2;
  double lf = rng.normal(), hf = rng.normal();
  double alpha = 0.3 + 0.05 * rng.normal(), beta = 2.0 * std::numbers::pi * rng.uniform();
  const double total = lf_sd * lf_sd + hf_sd * hf_sd;
  for (long long n = first; n <= last; ++n) {
    const double t = static_cast<double>(n) / rate;
    lf = phi_lf * lf + std::sqrt(1.0 - phi_lf * phi_lf) * rng.normal();
    hf = phi_hf * hf + std::sqrt(1.0 - phi_hf * phi_hf) * rng.normal();
    alpha += 0.002 * rng.normal();
    beta += 0.002 * rng.normal();
    const double s = strength(e, ph, t);
    const double b = 1.0 + (e.accel_roughness - 1.0) * s;
    const double a2 = std::max(0.05 * lf_sd * lf_sd, total - b * b * hf_sd * hf_sd) / (lf_sd * lf_sd);
    const double m = 1.0 + std::sqrt(a2) * lf_sd * lf + b * hf_sd * hf;
    rec.accel_x.samples.push_back({t, round_to(m * std::sin(alpha) * std::cos(beta), 1e-6)});
    rec.accel_y.samples.push_back({t, round_to(m * std::sin(alpha) * std::sin(beta), 1e-6)});
    rec.accel_z.samples.push_back({t, round_to(m * std::cos(alpha), 1e-6)});
  }
}

ParticipantRecord generate_participant(const SynthConfig& cfg, const std::string& id, Group group,
                                       std::uint64_t index) {
  Rng rng(derive_seed(cfg.seed, {0x5e17, index}));
  ParticipantRecord rec;
  rec.participant = {id, group};
  const double base_ms = rng.uniform(cfg.ibi_mean_min_ms, cfg.ibi_mean_max_ms);
  const double sd_ms = rng.uniform(cfg.ibi_sd_min_ms, cfg.ibi_sd_max_ms);
  const double lf_sd = cfg.accel_lf_sd_g * rng.uniform(0.8, 1.2);
  const double hf_sd = cfg.accel_hf_sd_g * rng.uniform(0.8, 1.2);

  std::vector<PhaseSchedule> schedule;
  for (int k = 1; k <= 3; ++k) {
    PhaseSchedule ph;
    ph.phase.index = k;
    ph.phase.start_s = cfg.recording_lead_s + (k - 1) * (cfg.phase_duration_s + cfg.phase_gap_s);
    ph.phase.end_s = ph.phase.start_s + cfg.phase_duration_s;
    ph.phase.scenario_sequence = {"highway", "rural", "urban"};
    if (group == Group::treatment && k > 1) {
      const double lo = k == 2 ? cfg.severe_bac_min : cfg.moderate_bac_min;
      const double hi = k == 2 ? cfg.severe_bac_max : cfg.moderate_bac_max;
      ph.bac.start = rng.uniform(0.5 * (lo + hi), hi);
      ph.bac.end = rng.uniform(lo, ph.bac.start);
    }
    schedule.push_back(ph);
  }
  for (const auto& ph : schedule) {
    rec.phases.push_back(ph.phase);
    generate_ibi_hr(cfg, ph, base_ms, sd_ms, rng, rec);
    generate_accel(cfg, ph, lf_sd, hf_sd, rng, rec);
    // Breath tests bracket each drive.
    for (double t : {ph.phase.start_s, ph.phase.end_s}) {
      const double frac = (t - ph.phase.start_s) / ph.phase.duration();
      rec.bac.push_back({id, t, std::nullopt, round_to(ph.bac.at(frac), 1e-5)});
    }
  }
  return rec;
}

}  // namespace

SynthEffect SynthEffect::none() {
  SynthEffect e;
  e.arousal_shift = 0.0;
  e.hrv_reduction = 0.0;
  e.accel_roughness = 1.0;
  return e;
}

SynthEffect SynthEffect::scaled(double k) const {
  if (k < 0) throw ValidationError("synth effect: scale must be non-negative");
  SynthEffect e = *this;
  e.arousal_shift *= k;
  e.hrv_reduction = std::min(0.95, hrv_reduction * k);
  e.accel_roughness = 1.0 + (accel_roughness - 1.0) * k;
  return e;
}

io::Json SynthEffect::to_json() const {
  return {{"arousal_shift", arousal_shift},     {"hrv_reduction", hrv_reduction},
          {"accel_roughness", accel_roughness}, {"onset_ramp_s", onset_ramp_s},
          {"reference_bac", reference_bac},
          {"profile", profile == EffectProfile::phase_level ? "phase_level" : "bac_tracking"}};
}

SynthEffect SynthEffect::from_json(const io::Json& j) {
  check_keys(j, {"arousal_shift", "hrv_reduction", "accel_roughness", "onset_ramp_s", "reference_bac", "profile"},
             "synth effect");
  SynthEffect e;
  read(j, "arousal_shift", e.arousal_shift);
  read(j, "hrv_reduction", e.hrv_reduction);
  read(j, "accel_roughness", e.accel_roughness);
  read(j, "onset_ramp_s", e.onset_ramp_s);
  read(j, "reference_bac", e.reference_bac);
  if (j.contains("profile")) {
    const auto& v = j.at("profile");
    if (v == "phase_level") {
      e.profile = EffectProfile::phase_level;
    } else if (v != "bac_tracking") {
      throw ValidationError("synth effect: profile must be bac_tracking or phase_level");
    }
  }
  return e;
}

SynthConfig SynthConfig::desk_default() {
  SynthConfig c;
  c.phase_duration_s = 600.0;
  c.phase_gap_s = 600.0;
  return c;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("synth config: " + m); };
  if (n_treatment < 0 || n_placebo < 0 || n_reference < 0) fail("participant counts must be non-negative");
  if (n_treatment + n_placebo + n_reference == 0) fail("cohort is empty");
  if (!(phase_duration_s > 0)) fail("phase_duration_s must be positive");
  if (phase_gap_s < 0 || recording_lead_s < 0) fail("gaps must be non-negative");
  if (!(severe_bac_min >= 0 && severe_bac_min <= severe_bac_max)) fail("severe BAC range is invalid");
  if (!(moderate_bac_min >= 0 && moderate_bac_min <= moderate_bac_max)) fail("moderate BAC range is invalid");
  if (!(ibi_mean_min_ms > 0 && ibi_mean_min_ms <= ibi_mean_max_ms)) fail("IBI mean range is invalid");
  if (!(ibi_sd_min_ms > 0 && ibi_sd_min_ms <= ibi_sd_max_ms)) fail("IBI sd range is invalid");
  if (!(ibi_ar >= 0 && ibi_ar < 1)) fail("ibi_ar must lie in [0, 1)");
  if (hr_noise_bpm < 0 || !(accel_lf_sd_g > 0) || !(accel_hf_sd_g > 0)) fail("noise levels are invalid");
  if (!(effect.hrv_reduction >= 0 && effect.hrv_reduction < 1)) fail("hrv_reduction must lie in [0, 1)");
  if (!(effect.accel_roughness > 0)) fail("accel_roughness must be positive");
  if (effect.onset_ramp_s < 0 || !(effect.reference_bac > 0)) fail("effect ramp or reference BAC is invalid");
}

io::Json SynthConfig::to_json() const {
  return {{"n_treatment", n_treatment},
          {"n_placebo", n_placebo},
          {"n_reference", n_reference},
          {"phase_duration_s", phase_duration_s},
          {"phase_gap_s", phase_gap_s},
          {"recording_lead_s", recording_lead_s},
          {"effect", effect.to_json()},
          {"severe_bac", {severe_bac_min, severe_bac_max}},
          {"moderate_bac", {moderate_bac_min, moderate_bac_max}},
          {"ibi_mean_ms", {ibi_mean_min_ms, ibi_mean_max_ms}},
          {"ibi_sd_ms", {ibi_sd_min_ms, ibi_sd_max_ms}},
          {"ibi_ar", ibi_ar},
          {"hr_noise_bpm", hr_noise_bpm},
          {"accel_lf_sd_g", accel_lf_sd_g},
          {"accel_hf_sd_g", accel_hf_sd_g},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const io::Json& j) {
  check_keys(j,
             {"n_treatment", "n_placebo", "n_reference", "phase_duration_s", "phase_gap_s", "recording_lead_s",
              "effect", "severe_bac", "moderate_bac", "ibi_mean_ms", "ibi_sd_ms", "ibi_ar", "hr_noise_bpm",
              "accel_lf_sd_g", "accel_hf_sd_g", "seed"},
             "synth config");
  SynthConfig c;
  read(j, "n_treatment", c.n_treatment);
  read(j, "n_placebo", c.n_placebo);
  read(j, "n_reference", c.n_reference);
  read(j, "phase_duration_s", c.phase_duration_s);
  read(j, "phase_gap_s", c.phase_gap_s);
  read(j, "recording_lead_s", c.recording_lead_s);
  if (j.contains("effect")) c.effect = SynthEffect::from_json(j.at("effect"));
  auto pair = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw ValidationError(std::string("synth config: '") + key + "' needs [min, max]");
    lo = v[0].get<double>();
    hi = v[1].get<double>();
  };
  pair("severe_bac", c.severe_bac_min, c.severe_bac_max);
  pair("moderate_bac", c.moderate_bac_min, c.moderate_bac_max);
  pair("ibi_mean_ms", c.ibi_mean_min_ms, c.ibi_mean_max_ms);
  pair("ibi_sd_ms", c.ibi_sd_min_ms, c.ibi_sd_max_ms);
  read(j, "ibi_ar", c.ibi_ar);
  read(j, "hr_noise_bpm", c.hr_noise_bpm);
  read(j, "accel_lf_sd_g", c.accel_lf_sd_g);
  read(j, "accel_hf_sd_g", c.accel_hf_sd_g);
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

Cohort generate_cohort(const SynthConfig& config) {
  config.validate();
  Cohort cohort;
  std::uint64_t index = 0;
  auto add = [&](int count, Group g, const char* prefix) {
    for (int i = 1; i <= count; ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "%s%02d", prefix, i);
      cohort.participants.push_back(generate_participant(config, id, g, index++));
    }
  };
  add(config.n_treatment, Group::treatment, "T");
  add(config.n_placebo, Group::placebo, "P");
  add(config.n_reference, Group::reference, "R");
  validate_cohort(cohort);
  return cohort;
}

Cohort generate_cohort(const SynthConfig& config, const std::filesystem::path& dir) {
  Cohort c = generate_cohort(config);
  write_cohort(c, dir);
  return c;
}

}  // namespace impairdetect
