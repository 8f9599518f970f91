#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "impairdetect/cohort.hpp"
#include "impairdetect/evaluation.hpp"
#include "impairdetect/features.hpp"
#include "impairdetect/linear_model.hpp"
#include "impairdetect/preprocess.hpp"
#include "impairdetect/synth.hpp"
#include "impairdetect/training.hpp"
#include "impairdetect/windowing.hpp"

namespace impairdetect {

struct PreprocessConfig {
  OutlierConfig outliers;
  /// participant_phase applies per-phase z-scores twice: to IBI/HR before the
  /// arousal features and to the arousal and acceleration series fed to models.
  NormScope scope = NormScope::participant;
  double arousal_window_s = 60.0;
  double arousal_step_s = 1.0;

  io::Json to_json() const;
  static PreprocessConfig from_json(const io::Json& j);
};

/// Model-ready streams of one participant. `record` keeps identity, phases
/// and BAC; its raw signal series are empty.
struct PreparedParticipant {
  ParticipantRecord record;
  SampleSeries arousal{Modality::arousal_prob, {}};
  SampleSeries accel{Modality::accel_mag_g, {}};
  io::Json stats = io::Json::object();  // outlier counts and normalization statistics
};

struct PreparedCohort {
  PreprocessConfig config;
  std::string estimator;
  std::vector<PreparedParticipant> participants;

  std::vector<std::string> ids() const;
  /// Phase start per (participant, phase index).
  std::map<std::pair<std::string, int>, double> phase_starts() const;

  void write(const std::filesystem::path& dir) const;
  static PreparedCohort read(const std::filesystem::path& dir);
};

/// clean -> normalize -> arousal features -> arousal probability, plus the
/// acceleration magnitude. Participants are independent; `threads` only
/// changes speed.
PreparedCohort preprocess_cohort(const Cohort& cohort, const PreprocessConfig& config,
                                 const ArousalEstimator& estimator, unsigned threads = 1);

/// Windows of every participant with all task labels assigned.
std::vector<WindowSegment> make_windows(const PreparedCohort& cohort, const WindowSpec& spec,
                                        SegmentStats* stats = nullptr);

/// windows.csv (references, coverage, labels) plus grids.bin (little-endian
/// float64 arousal then acceleration grid per window) and spec.json.
void write_windows(std::span<const WindowSegment> windows, const std::filesystem::path& dir);
std::vector<WindowSegment> read_windows(const std::filesystem::path& dir);

enum class GroupScope { all, treatment, control };
GroupScope parse_group_scope(std::string_view s);
std::string_view to_string(GroupScope s);
bool in_scope(Group g, GroupScope s);

struct LrConfig {
  Task task = Task::early_warning;
  std::vector<FeatureModality> modalities{FeatureModality::arousal, FeatureModality::accel};
  LassoConfig lasso;
  ImputeMode impute = ImputeMode::median;
  double max_missing = 0.5;
  std::uint64_t seed = 0;
  double ci_level = 0.95;

  io::Json to_json() const;
  static LrConfig from_json(const io::Json& j);
};

using PhaseStarts = std::map<std::pair<std::string, int>, double>;

struct LrRun {
  LosoPlan plan;
  std::vector<WindowPrediction> predictions;
  std::vector<LassoLogitModel> models;  // one per fold that had test windows
  std::vector<DesignStats> designs;
  std::vector<std::string> fold_ids;
  EvalReport report;
  std::vector<FamilyCoefficient> families;
};

/// LOSO over the table's participants. Each fold fits on every participant
/// except the held-out one; the validation split is not used by this model.
LrRun run_lr_loso(const FeatureTable& table, const PhaseStarts& phase_starts, const LrConfig& config,
                  unsigned threads = 1);

struct CnnRun {
  LosoPlan plan;
  std::vector<WindowPrediction> predictions;
  std::vector<nn::CnnModel> models;
  std::vector<std::string> fold_ids;
  EvalReport report;
};

using FoldCallback = std::function<void(std::size_t fold, std::size_t folds, const nn::CnnModel& model)>;

/// LOSO with inner train / validation participants from the plan; fold f
/// trains with a seed derived from (config.seed, f).
CnnRun run_cnn_loso(const nn::CnnData& data, const PhaseStarts& phase_starts, const nn::TrainConfig& config,
                    double ci_level = 0.95, const FoldCallback& on_fold = {});

/// Keeps windows whose group lies in the scope.
std::vector<WindowSegment> filter_windows(std::span<const WindowSegment> windows, GroupScope scope);

struct SweepRow {
  double length_s = 0.0;
  double step_s = 0.0;
  std::size_t windows = 0;
  EvalReport report;
};

inline constexpr std::array<double, 7> kSweepLengths{30, 60, 120, 180, 300, 450, 600};

/// Full LR pipeline per window length with the quarter-step rule.
std::vector<SweepRow> window_sweep(const PreparedCohort& cohort, std::span<const double> lengths,
                                   const FeatureCatalog& catalog, const LrConfig& config, unsigned threads = 1);
void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& csv_path);

struct EffectSweepRow {
  double scale = 0.0;
  EvalReport report;
};

/// Generates a cohort per effect scale (base effect multiplied by the scale)
/// and runs preprocessing plus the LR pipeline on the feature windows.
std::vector<EffectSweepRow> effect_sweep(const SynthConfig& base, std::span<const double> scales,
                                         const PreprocessConfig& preprocess, const FeatureCatalog& catalog,
                                         const LrConfig& config, unsigned threads = 1);
void write_effect_sweep_csv(std::span<const EffectSweepRow> rows, const std::filesystem::path& csv_path);

}  // namespace impairdetect
