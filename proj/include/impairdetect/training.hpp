#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impairdetect/features.hpp"
#include "impairdetect/io.hpp"
#include "impairdetect/neural.hpp"
#include "impairdetect/types.hpp"

namespace impairdetect::nn {

struct TrainConfig {
  AdamWConfig optimizer;
  double plateau_factor = 0.5;
  int plateau_patience = 3;
  double plateau_threshold = 1e-4;
  int early_stop_patience = 10;
  int max_epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  Task task = Task::early_warning;
  /// Empty: balanced weights N / (K * N_c) from the training targets.
  std::vector<double> class_weights;
  CnnArch arch;

  io::Json to_json() const;
  static TrainConfig from_json(const io::Json& j);
};

/// Number of network outputs for a task.
std::size_t output_count(Task task);

/// Flat float copies of the window grids, row-major per window.
struct CnnData {
  std::size_t arousal_length = 180;
  std::size_t accel_length = 4500;
  std::vector<float> arousal;
  std::vector<float> accel;
  std::vector<double> targets;  // task label per window
  std::vector<WindowRef> refs;

  std::size_t size() const { return refs.size(); }
};

/// Requires every window to share one length; grids are imputed already.
CnnData make_cnn_data(std::span<const WindowSegment> windows, Task task);

/// Per-modality z-score statistics; a disabled modality keeps 0 / 1.
struct InputNorm {
  double arousal_mean = 0.0, arousal_std = 1.0;
  double accel_mean = 0.0, accel_std = 1.0;

  static InputNorm fit(const CnnData& data, std::span<const std::size_t> rows);
  io::Json to_json() const;
  static InputNorm from_json(const io::Json& j);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
  bool improved = false;
};

struct TrainHistory {
  std::string metric;  // "val_auroc", "val_macro_auroc" or "neg_val_loss"
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_metric = 0.0;
  bool stopped_early = false;
  std::vector<std::string> warnings;

  io::Json to_json() const;
  static TrainHistory from_json(const io::Json& j);
};

/// Trained network plus everything needed to run it again.
struct CnnModel {
  TrainConfig config;
  InputNorm norm;
  std::vector<float> state;
  TrainHistory history;

  /// weights.bin (little-endian float32, layout order) and manifest.json.
  void save(const std::filesystem::path& dir) const;
  static CnnModel load(const std::filesystem::path& dir);
};

/// Epoch loop over seeded shuffled mini-batches with AdamW, the plateau
/// scheduler and early stopping on the validation metric; returns the state of
/// the best epoch. Train and validation rows must come from disjoint
/// participants.
CnnModel train_cnn(const CnnData& data, std::span<const std::size_t> train_rows,
                   std::span<const std::size_t> val_rows, const TrainConfig& config);

/// Evaluation-mode outputs: probability (binary), class probabilities 1..K
/// (categorical) or the value (regression), one vector per row.
std::vector<std::vector<double>> predict_cnn(const CnnModel& model, const CnnData& data,
                                             std::span<const std::size_t> rows);

}  // namespace impairdetect::nn
