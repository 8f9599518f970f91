#pragma once

#include <cstdint>
#include <limits>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impairdetect/cohort.hpp"
#include "impairdetect/io.hpp"
#include "impairdetect/metrics.hpp"

namespace impairdetect {

struct LosoFold {
  std::string held_out;
  std::vector<std::string> train;
  std::vector<std::string> validation;
};

struct LosoPlan {
  std::uint64_t seed = 0;
  std::size_t validation_size = 0;
  std::vector<LosoFold> folds;
  std::vector<std::string> warnings;

  io::Json to_json() const;
  static LosoPlan from_json(const io::Json& j);
};

inline constexpr std::size_t kLosoValidationSize = 10;
inline constexpr std::size_t kLosoMinParticipants = 4;

/// Validation size: min(10, max(2, floor(0.2 * (N - 1)))), capped so at least
/// one training participant remains.
std::size_t loso_validation_size(std::size_t participants);

/// One fold per participant in the given order; each fold draws its validation
/// participants without replacement from the remainder with an RNG derived from
/// (seed, fold index).
LosoPlan make_loso_plan(std::span<const std::string> participant_ids, std::uint64_t seed);
LosoPlan make_loso_plan(const Cohort& cohort, std::uint64_t seed);

/// Held-out prediction for one window.
struct WindowPrediction {
  std::string participant_id;
  Group group = Group::treatment;
  int phase_index = 1;
  double start_s = 0.0;
  double elapsed_s = 0.0;  // window end minus phase start
  double label = 0.0;      // {0,1}, phase 1..3 or reference BAC
  double score = 0.0;      // probability, or BAC estimate
  std::vector<double> class_probs;  // categorical only
};

struct MetricSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
};

struct ParticipantMetrics {
  std::string participant_id;
  Group group = Group::treatment;
  std::size_t windows = 0;
  double auroc = 0.0;
  double auprc = 0.0;
  double prevalence = 0.0;
};

struct ScopeMetrics {
  std::string scope;  // "treatment" or "all"
  std::size_t windows = 0;
  std::size_t positives = 0;
  bool defined = false;  // both classes present
  double auroc = std::numeric_limits<double>::quiet_NaN();
  double auprc = std::numeric_limits<double>::quiet_NaN();
  double random_auprc = std::numeric_limits<double>::quiet_NaN();
  std::optional<DelongResult> ci;
  std::vector<RocPoint> roc;
  std::vector<PrPoint> pr;
  std::optional<RegressionMetrics> regression;
};

struct EvalReport {
  std::string model;
  Task task = Task::early_warning;
  io::Json meta = io::Json::object();  // modalities, normalization, config snapshot
  std::vector<ParticipantMetrics> participants;
  std::vector<std::string> excluded;  // lacked both classes
  MetricSummary macro_auroc, macro_auprc, macro_random_auprc;
  ScopeMetrics pooled_treatment, pooled_all;

  io::Json to_json() const;
  static EvalReport from_json(const io::Json& j);
  /// report.json plus per-participant, ROC and PR curve CSVs.
  void write(const std::filesystem::path& dir) const;
};

/// Builds the report. Macro statistics use the mean and population std over
/// participants whose held-out windows contain both classes (binary) or at
/// least two phases (categorical, one-vs-rest). Pooled metrics are computed
/// over treatment participants and over everyone.
EvalReport aggregate(std::span<const WindowPrediction> predictions, Task task, const std::string& model,
                     double ci_level = 0.95);

struct CmaPoint {
  double elapsed_s = 0.0;
  std::size_t windows = 0;
  double auroc = std::numeric_limits<double>::quiet_NaN();
  std::optional<DelongResult> ci;
};

struct CmaResult {
  std::vector<WindowPrediction> smoothed;  // one per (segment, bin), score = CMA
  std::vector<CmaPoint> curve;
};

/// Per participant and phase: mean prediction per bin of bin_s seconds of
/// elapsed time, then the cumulative mean over bins. The AUROC curve at time t
/// pools every smoothed value observed up to t, starting at first_output_s.
CmaResult cma_smooth(std::span<const WindowPrediction> predictions, double bin_s = 15.0,
                     double first_output_s = 180.0, double ci_level = 0.99);

void write_cma_curve(const CmaResult& cma, const std::filesystem::path& csv_path);

void write_predictions(std::span<const WindowPrediction> predictions, const std::filesystem::path& csv_path);
std::vector<WindowPrediction> read_predictions(const std::filesystem::path& csv_path);

}  // namespace impairdetect
