#include "impairdetect/metrics.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "impairdetect/stats.hpp"
#include "impairdetect/types.hpp"

namespace impairdetect {

namespace {

void check_pairs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("metrics: scores and labels differ in length");
  for (double s : scores) {
    if (std::isnan(s)) throw ValidationError("metrics: NaN score");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("metrics: labels must be 0 or 1");
  }
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1;
  return {pos, labels.size() - pos};
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores, labels);
  const auto [pos, neg] = class_counts(labels);
  if (pos == 0 || neg == 0) throw ValidationError("auroc: both classes are required");
  const auto ranks = stats::average_ranks(scores);
  double sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (labels[i] == 1) sum += ranks[i];
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (sum - p * (p + 1.0) / 2.0) / (p * n);
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores, labels);
  const auto [pos, neg] = class_counts(labels);
  (void)neg;
  if (pos == 0) throw ValidationError("auprc: no positive labels");
  const auto idx = descending(scores);
  double ap = 0.0, tp = 0.0, fp = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / static_cast<double>(pos);
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double prevalence(std::span<const int> labels) {
  if (labels.empty()) throw ValidationError("prevalence: empty labels");
  return static_cast<double>(class_counts(labels).first) / static_cast<double>(labels.size());
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores, labels);
  const auto [pos, neg] = class_counts(labels);
  if (pos == 0 || neg == 0) throw ValidationError("roc_curve: both classes are required");
  const auto idx = descending(scores);
  std::vector<RocPoint> pts{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    pts.push_back({fp / static_cast<double>(neg), tp / static_cast<double>(pos), scores[idx[i]]});
    i = j;
  }
  return pts;
}

std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores, labels);
  const auto pos = class_counts(labels).first;
  if (pos == 0) throw ValidationError("pr_curve: no positive labels");
  const auto idx = descending(scores);
  std::vector<PrPoint> pts{{0.0, 1.0, std::numeric_limits<double>::infinity()}};
  double tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    pts.push_back({tp / static_cast<double>(pos), tp / (tp + fp), scores[idx[i]]});
    i = j;
  }
  return pts;
}

DelongResult delong_ci(std::span<const double> scores, std::span<const int> labels, double level) {
  check_pairs(scores, labels);
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("delong_ci: level must be in (0, 1)");
  std::vector<double> x, y;  // positives, negatives
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] == 1 ? x : y).push_back(scores[i]);
  if (x.size() < 2 || y.size() < 2) throw ValidationError("delong_ci: need at least 2 samples per class");
  const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
  const auto r_all = stats::average_ranks(scores);
  const auto r_x = stats::average_ranks(x);
  const auto r_y = stats::average_ranks(y);
  // Placement values from rank differences.
  std::vector<double> v10, v01;
  std::size_t ix = 0, iy = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) {
      v10.push_back((r_all[i] - r_x[ix++]) / n);
    } else {
      v01.push_back(1.0 - (r_all[i] - r_y[iy++]) / m);
    }
  }
  DelongResult res;
  res.level = level;
  res.auc = stats::mean(v10);
  const double s10 = stats::variance(v10) * m / (m - 1.0);
  const double s01 = stats::variance(v01) * n / (n - 1.0);
  res.variance = s10 / m + s01 / n;
  const boost::math::normal_distribution<double> nd;
  const double z = boost::math::quantile(nd, 1.0 - (1.0 - level) / 2.0);
  const double half = z * std::sqrt(std::max(0.0, res.variance));
  res.low = std::clamp(res.auc - half, 0.0, 1.0);
  res.high = std::clamp(res.auc + half, 0.0, 1.0);
  return res;
}

namespace {

template <typename Metric>
double macro_ovr(const std::vector<std::vector<double>>& probs, std::span<const int> classes, Metric metric) {
  if (probs.size() != classes.size()) throw ValidationError("macro_ovr: probabilities and classes differ in length");
  if (probs.empty()) throw ValidationError("macro_ovr: empty input");
  const std::size_t k = probs[0].size();
  double acc = 0.0;
  std::size_t used = 0;
  std::vector<double> s(probs.size());
  std::vector<int> l(probs.size());
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      s[i] = probs[i][c];
      l[i] = classes[i] == static_cast<int>(c + 1) ? 1 : 0;
      pos += static_cast<std::size_t>(l[i]);
    }
    if (pos == 0 || pos == probs.size()) continue;
    acc += metric(s, l);
    ++used;
  }
  if (used == 0) throw ValidationError("macro_ovr: no class has both memberships");
  return acc / static_cast<double>(used);
}

}  // namespace

double macro_ovr_auroc(const std::vector<std::vector<double>>& probs, std::span<const int> classes) {
  return macro_ovr(probs, classes, [](const auto& s, const auto& l) { return auroc(s, l); });
}

double macro_ovr_auprc(const std::vector<std::vector<double>>& probs, std::span<const int> classes) {
  return macro_ovr(probs, classes, [](const auto& s, const auto& l) { return auprc(s, l); });
}

double macro_ovr_prevalence(std::span<const int> classes, int num_classes) {
  double acc = 0.0;
  int used = 0;
  for (int c = 1; c <= num_classes; ++c) {
    const auto pos = static_cast<std::size_t>(std::count(classes.begin(), classes.end(), c));
    if (pos == 0 || pos == classes.size()) continue;
    acc += static_cast<double>(pos) / static_cast<double>(classes.size());
    ++used;
  }
  if (used == 0) throw ValidationError("macro_ovr_prevalence: no class has both memberships");
  return acc / used;
}

RegressionMetrics regression_eval(std::span<const double> predicted, std::span<const double> reference,
                                  double threshold) {
  if (predicted.size() != reference.size() || predicted.empty()) {
    throw ValidationError("regression_eval: need paired, non-empty inputs");
  }
  RegressionMetrics r;
  double acc = 0.0;
  std::vector<int> labels(reference.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!std::isfinite(predicted[i]) || !std::isfinite(reference[i])) {
      throw ValidationError("regression_eval: non-finite value");
    }
    acc += std::abs(predicted[i] - reference[i]);
    labels[i] = reference[i] > threshold ? 1 : 0;
  }
  r.mae = acc / static_cast<double>(predicted.size());
  r.pearson = stats::pearson(predicted, reference);
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.auroc = pos == 0 || pos == labels.size() ? std::numeric_limits<double>::quiet_NaN() : auroc(predicted, labels);
  return r;
}

}  // namespace impairdetect
