#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "impairdetect/io.hpp"
#include "impairdetect/windowing.hpp"

namespace impairdetect {

enum class FeatureModality { arousal, accel };

std::string_view to_string(FeatureModality m);
FeatureModality parse_feature_modality(std::string_view s);

inline constexpr std::array<std::string_view, 15> kFeatureFamilies = {
    "spectral", "quantile",  "wavelet", "trend",    "autocorrelation", "counts",       "entropy",   "summary",
    "autoregressive", "nonlinear", "peaks", "boolean", "stationarity",  "similarity", "other"};

struct FeatureDef {
  std::string name;
  std::string family;
  std::string kind;
  io::Json params = io::Json::object();
};

/// Versioned list of enabled features. The same catalog is applied to every
/// modality; names are shared, families tag each column.
struct FeatureCatalog {
  std::string version = "1";
  std::vector<FeatureDef> features;

  static FeatureCatalog default_catalog();
  static FeatureCatalog from_json(const io::Json& j);
  static FeatureCatalog load(const std::filesystem::path& path);
  io::Json to_json() const;

  std::size_t size() const { return features.size(); }
  std::vector<std::string> names() const;
};

/// Computes every catalog feature on one series sampled at rate_hz. Features
/// whose minimum length is not met, or which are undefined for the input, are
/// NaN (missing).
std::vector<double> compute_features(std::span<const double> x, double rate_hz, const FeatureCatalog& catalog);

struct WindowRef {
  std::string participant_id;
  Group group = Group::treatment;
  int phase_index = 1;
  double start_s = 0.0;
  double length_s = 0.0;
  WindowLabels labels;

  double end_s() const { return start_s + length_s; }
};

WindowRef window_ref(const WindowSegment& w);

struct FeatureVector {
  WindowRef window;
  FeatureModality modality = FeatureModality::arousal;
  std::vector<double> values;  // aligned with the catalog, NaN = missing
};

FeatureVector extract_features(const WindowSegment& window, FeatureModality modality, const FeatureCatalog& catalog);

struct FeatureColumn {
  std::string name;  // "<modality>__<feature>"
  std::string family;
  FeatureModality modality = FeatureModality::arousal;
};

/// Feature rows of a run, one per window, with modality blocks concatenated in
/// the order given by `modalities`.
struct FeatureTable {
  std::vector<FeatureColumn> columns;
  std::vector<WindowRef> windows;
  std::vector<std::vector<double>> rows;

  std::size_t size() const { return rows.size(); }
  /// Columns belonging to the requested modalities.
  std::vector<std::size_t> columns_for(std::span<const FeatureModality> modalities) const;
};

/// Extracts both modalities and concatenates them (arousal block first).
/// Parallelized over windows with `threads` workers; results do not depend on it.
FeatureTable build_feature_table(std::span<const WindowSegment> windows, const FeatureCatalog& catalog,
                                 std::span<const FeatureModality> modalities, unsigned threads = 1);

void write_feature_table(const FeatureTable& table, const std::filesystem::path& csv_path);
/// Families are recovered from the catalog by feature name.
FeatureTable read_feature_table(const std::filesystem::path& csv_path, const FeatureCatalog& catalog);

enum class ImputeMode { median, drop };

/// Column statistics fitted on a training fold and reused on any other fold.
struct DesignStats {
  std::vector<std::size_t> source_columns;  // candidate columns considered
  std::vector<std::size_t> kept;            // indices into the table's columns
  std::vector<std::size_t> dropped;         // too many missing values
  std::vector<double> medians, means, scales;
  ImputeMode impute = ImputeMode::median;
  double max_missing = 0.5;

  io::Json to_json(const FeatureTable& table) const;
};

struct DesignMatrix {
  std::vector<std::vector<double>> x;  // standardized, row-major
  std::vector<std::size_t> rows;       // table rows represented (drop mode skips some)
};

/// Drops columns with more than max_missing missing training cells, fills the
/// rest with training medians (or drops incomplete rows) and standardizes with
/// training mean and population std (std 0 -> scale 1).
DesignStats fit_design(const FeatureTable& table, std::span<const std::size_t> train_rows,
                       std::span<const std::size_t> columns, ImputeMode impute = ImputeMode::median,
                       double max_missing = 0.5);
DesignMatrix apply_design(const DesignStats& stats, const FeatureTable& table, std::span<const std::size_t> rows);

}  // namespace impairdetect
