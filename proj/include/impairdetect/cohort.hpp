#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "impairdetect/io.hpp"
#include "impairdetect/types.hpp"

namespace impairdetect {

/// Everything recorded for one participant. Signal series may be empty when a
/// modality is absent; ingestion of a manifest requires all files to exist.
struct ParticipantRecord {
  Participant participant;
  std::vector<DrivingPhase> phases;  // ordered by index, disjoint
  SampleSeries ibi{Modality::ibi_ms, {}};
  SampleSeries hr{Modality::hr_bpm, {}};
  SampleSeries accel_x{Modality::accel_x_g, {}};
  SampleSeries accel_y{Modality::accel_y_g, {}};
  SampleSeries accel_z{Modality::accel_z_g, {}};
  std::vector<BacMeasurement> bac;  // sorted by timestamp

  const DrivingPhase& phase(int index) const;
  /// Phase whose closed interval contains [start, end], or nullptr.
  const DrivingPhase* phase_containing(double start, double end) const;
};

/// Immutable after construction; safe to share across readers.
struct Cohort {
  std::vector<ParticipantRecord> participants;

  const ParticipantRecord& find(const std::string& id) const;
  std::size_t count(Group g) const;
  std::vector<std::string> ids() const;
};

/// Checks the cross-record invariants (unique ids, ordered disjoint phases,
/// signal monotonicity, non-negative BAC).
void validate_cohort(const Cohort& cohort);

/// Reads a manifest.json and everything it references (paths resolve against
/// the manifest's directory).
Cohort ingest_cohort(const std::filesystem::path& manifest_path);
Cohort ingest_cohort(const std::filesystem::path& root, const io::Json& manifest);

/// Writes manifest.json, per-participant signal CSVs and bac.csv.
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

SampleSeries read_signal_csv(const std::filesystem::path& path, Modality modality);
void write_signal_csv(const std::filesystem::path& path, const SampleSeries& series);

}  // namespace impairdetect
