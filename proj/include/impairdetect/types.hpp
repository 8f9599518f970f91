#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace impairdetect {

/// Input or invariant violation. The CLI maps it to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-level ingestion failure carrying the offending file and 1-based row.
class IngestError : public ValidationError {
 public:
  IngestError(std::string file, std::size_t row, const std::string& what);

  const std::string& file() const noexcept { return file_; }
  std::size_t row() const noexcept { return row_; }

 private:
  std::string file_;
  std::size_t row_;
};

enum class Group { treatment, placebo, reference };

std::string_view to_string(Group g);
Group parse_group(std::string_view s);
inline bool is_control(Group g) { return g != Group::treatment; }

enum class Modality { ibi_ms, hr_bpm, arousal_prob, accel_x_g, accel_y_g, accel_z_g, accel_mag_g };

std::string_view to_string(Modality m);

enum class Task { early_warning, above_limit, phase_categorical, bac_regression };

std::string_view to_string(Task t);
/// Accepts the CLI short forms (early, above, phase, bac) and the full names.
Task parse_task(std::string_view s);
inline bool is_binary(Task t) { return t == Task::early_warning || t == Task::above_limit; }

struct Participant {
  std::string id;
  Group group = Group::treatment;
};

struct DrivingPhase {
  int index = 1;  // 1..3
  double start_s = 0.0;
  double end_s = 0.0;
  std::vector<std::string> scenario_sequence;

  double duration() const { return end_s - start_s; }
  bool contains(double t) const { return t >= start_s && t <= end_s; }
};

struct Sample {
  double t = 0.0;
  double value = 0.0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Timestamped scalar stream with strictly increasing timestamps.
struct SampleSeries {
  Modality modality = Modality::ibi_ms;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::vector<double> values() const;
  std::vector<double> times() const;

  /// Throws ValidationError on non-monotonic timestamps or out-of-domain values.
  void validate() const;
};

struct BacMeasurement {
  std::string participant_id;
  double t = 0.0;
  std::optional<double> brac_mg_per_l;
  double bac_g_per_dl = 0.0;
};

struct TaskLabel {
  Task task = Task::early_warning;
  double value = 0.0;  // {0,1}, phase {1,2,3}, or g/dL

  int as_int() const { return static_cast<int>(value); }
};

}  // namespace impairdetect
