#pragma once

#include <span>
#include <vector>

namespace impairdetect {

/// Mann-Whitney AUROC via rank sums with average ranks for ties. Labels are 0/1.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Average precision: sum over distinct thresholds (descending) of
/// (R_k - R_{k-1}) * P_k, tied scores entering together.
double auprc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of positive labels, the AUPRC of an uninformative ranking.
double prevalence(std::span<const int> labels);

struct RocPoint {
  double fpr, tpr, threshold;
};
struct PrPoint {
  double recall, precision, threshold;
};

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

struct DelongResult {
  double auc = 0.0;
  double variance = 0.0;
  double low = 0.0;
  double high = 0.0;
  double level = 0.95;
};

/// Placement-value variance and a normal-approximation interval clipped to [0, 1].
DelongResult delong_ci(std::span<const double> scores, std::span<const int> labels, double level = 0.95);

/// Mean one-vs-rest AUROC / AUPRC across the classes that occur with both
/// memberships. probs[i][k] is the probability of class k + 1 for row i;
/// classes are 1..K.
double macro_ovr_auroc(const std::vector<std::vector<double>>& probs, std::span<const int> classes);
double macro_ovr_auprc(const std::vector<std::vector<double>>& probs, std::span<const int> classes);
/// Mean one-vs-rest class prevalence over the classes used by the macro metrics.
double macro_ovr_prevalence(std::span<const int> classes, int num_classes);

struct RegressionMetrics {
  double mae = 0.0;
  double pearson = 0.0;
  double auroc = 0.0;  // predictions as scores against reference > threshold
};

RegressionMetrics regression_eval(std::span<const double> predicted, std::span<const double> reference,
                                  double threshold = 0.05);

}  // namespace impairdetect
