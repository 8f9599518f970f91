#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "impairdetect/features.hpp"
#include "impairdetect/io.hpp"

namespace impairdetect {

struct LassoConfig {
  /// Absolute L1 strength; NaN selects lambda_ratio * lambda_max.
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double lambda_ratio = 0.01;
  double tol = 1e-6;  // KKT tolerance
  int max_iter = 2000;  // outer iterations
  /// Optional fixed weights for {class 0, class 1}; empty -> N / (2 N_c).
  std::vector<double> class_weights;
};

struct LassoLogitModel {
  std::vector<double> weights;
  double bias = 0.0;
  double lambda = 0.0;
  std::array<double, 2> class_weights{1.0, 1.0};
  std::vector<FeatureColumn> columns;  // optional metadata, aligned with weights
  std::uint64_t seed = 0;
  int iterations = 0;
  bool converged = false;
  double kkt_residual = 0.0;
  std::vector<double> objective_history;  // after every outer iteration

  std::string column_metadata_hash() const;
  io::Json to_json() const;
  static LassoLogitModel from_json(const io::Json& j);
};

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows);

/// N / (2 N_c) for c in {0, 1}. Throws if a class is absent.
std::array<double, 2> balanced_class_weights(std::span<const int> y);

/// Smallest lambda whose solution has every weight at zero.
double lambda_max(const Eigen::MatrixXd& x, std::span<const int> y, const std::array<double, 2>& class_weights);

/// Mean class-weighted logistic loss plus lambda * |w|_1 (bias unpenalized).
double lasso_objective(const LassoLogitModel& model, const Eigen::MatrixXd& x, std::span<const int> y);

/// Largest KKT violation: |g_j| - lambda for zero weights, |g_j + lambda sign(w_j)|
/// otherwise, and |g_bias| for the intercept. g is the gradient of the smooth part.
double kkt_residual(const LassoLogitModel& model, const Eigen::MatrixXd& x, std::span<const int> y);

/// Proximal Newton: each iteration runs coordinate descent on the weighted
/// quadratic model of the loss and backtracks on the true objective, so the
/// objective never increases. If no step length helps, a cyclic pass with the
/// quadratic upper bound (curvature 1/4) is taken instead.
LassoLogitModel fit_lasso_logit(const Eigen::MatrixXd& x, std::span<const int> y, const LassoConfig& config = {});

std::vector<double> predict_proba(const LassoLogitModel& model, const Eigen::MatrixXd& x);

struct FamilyCoefficient {
  std::string task;
  FeatureModality modality = FeatureModality::arousal;
  std::string family;
  double mean = 0.0;
  double std = 0.0;
  bool missing = false;  // every column of the family was excluded
  std::size_t folds = 0;
};

/// Per fold: mean |w| over the family's kept columns. Across folds: mean and
/// population std of those per-fold values. `all_columns` lists the candidate
/// columns before exclusion so dropped families can be reported as missing.
std::vector<FamilyCoefficient> coefficient_family_report(std::span<const LassoLogitModel> models,
                                                         std::span<const FeatureColumn> all_columns,
                                                         const std::string& task);

}  // namespace impairdetect
