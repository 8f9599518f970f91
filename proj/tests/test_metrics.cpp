#include <doctest.h>

#include <cmath>

#include "impairdetect/metrics.hpp"
#include "impairdetect/rng.hpp"
#include "impairdetect/types.hpp"

using namespace impairdetect;

namespace {

double brute_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      den += 1.0;
    }
  }
  return num / den;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == doctest::Approx(0.75));
  CHECK(auroc(std::vector<double>{1, 2, 3, 4}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auroc(std::vector<double>{4, 3, 2, 1}, std::vector<int>{0, 0, 1, 1}) == 0.0);
  CHECK(auroc(std::vector<double>{5, 5, 5, 5}, std::vector<int>{0, 1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(auroc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), ValidationError);
  CHECK_THROWS_AS(auroc(std::vector<double>{1, std::nan("")}, std::vector<int>{0, 1}), ValidationError);
}

TEST_CASE("auroc matches pair counting with ties") {
  Rng rng(21);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 2 + rng.index(49);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.index(6));
      y[i] = rng.uniform() < 0.4;
    }
    y[0] = 0;
    y[1] = 1;
    CHECK(auroc(s, y) == doctest::Approx(brute_auroc(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("auroc invariances") {
  Rng rng(5);
  std::vector<double> s(40);
  std::vector<int> y(40);
  for (int i = 0; i < 40; ++i) {
    s[i] = rng.normal();
    y[i] = i % 3 == 0;
  }
  const double a = auroc(s, y);
  std::vector<double> mono(s.size()), flipped(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    mono[i] = std::exp(2.0 * s[i]) + 7.0;
    flipped[i] = -s[i];
  }
  CHECK(auroc(mono, y) == doctest::Approx(a));
  CHECK(auroc(flipped, y) == doctest::Approx(1.0 - a));
}

TEST_CASE("auprc") {
  CHECK(auprc(std::vector<double>{0.9, 0.8, 0.7, 0.1}, std::vector<int>{1, 1, 0, 0}) == 1.0);
  // ranking 1,0,1: precision 1 at recall 0.5, 2/3 at recall 1
  CHECK(auprc(std::vector<double>{3, 2, 1}, std::vector<int>{1, 0, 1}) == doctest::Approx(0.5 + 1.0 / 3.0));
  // all tied -> prevalence
  CHECK(auprc(std::vector<double>{1, 1, 1, 1}, std::vector<int>{1, 0, 0, 0}) == doctest::Approx(0.25));
  CHECK(prevalence(std::vector<int>{1, 0, 0}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("curves end at the corners") {
  const std::vector<double> s{0.2, 0.9, 0.5, 0.5, 0.1};
  const std::vector<int> y{0, 1, 1, 0, 0};
  const auto roc = roc_curve(s, y);
  CHECK(roc.front().fpr == 0.0);
  CHECK(roc.front().tpr == 0.0);
  CHECK(roc.back().fpr == 1.0);
  CHECK(roc.back().tpr == 1.0);
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2;
  CHECK(area == doctest::Approx(auroc(s, y)));
  const auto pr = pr_curve(s, y);
  CHECK(pr.back().recall == 1.0);
}

TEST_CASE("DeLong interval") {
  const std::vector<double> s{0.1, 0.2, 0.3, 0.7, 0.8, 0.9};
  const std::vector<int> y{0, 0, 0, 1, 1, 1};
  const auto r = delong_ci(s, y);
  CHECK(r.auc == 1.0);
  CHECK(r.variance == 0.0);
  CHECK(r.low == 1.0);
  CHECK(r.high == 1.0);

  Rng rng(3);
  std::vector<double> s2(100);
  std::vector<int> y2(100);
  for (int i = 0; i < 100; ++i) {
    y2[i] = i % 2;
    s2[i] = rng.normal() + 0.8 * y2[i];
  }
  const auto w = delong_ci(s2, y2, 0.95);
  const auto n = delong_ci(s2, y2, 0.80);
  CHECK(w.auc == doctest::Approx(auroc(s2, y2)));
  CHECK(w.low <= n.low);
  CHECK(w.high >= n.high);
  CHECK(w.low < w.auc);
  CHECK(w.high > w.auc);
  // half-width matches z * sqrt(variance)
  CHECK((w.high - w.low) / 2 == doctest::Approx(1.959963985 * std::sqrt(w.variance)).epsilon(1e-6));
}

TEST_CASE("regression metrics") {
  const std::vector<double> ref{0.0, 0.02, 0.06, 0.08};
  const std::vector<double> pred{0.01, 0.03, 0.05, 0.09};
  const auto r = regression_eval(pred, ref);
  CHECK(r.mae == doctest::Approx(0.01));
  CHECK(r.pearson > 0.9);
  CHECK(r.auroc == 1.0);
  const std::vector<double> flat{0.0, 0.01, 0.02, 0.03};
  CHECK(std::isnan(regression_eval(flat, flat).auroc));
}

TEST_CASE("macro one-vs-rest") {
  const std::vector<std::vector<double>> probs{{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.1, 0.8}, {0.7, 0.2, 0.1}};
  const std::vector<int> cls{1, 2, 3, 1};
  CHECK(macro_ovr_auroc(probs, cls) == 1.0);
  CHECK(macro_ovr_prevalence(cls, 3) == doctest::Approx((0.5 + 0.25 + 0.25) / 3.0));
  // a class that never occurs is skipped
  const std::vector<int> two{1, 2, 2, 1};
  CHECK(macro_ovr_prevalence(two, 3) == doctest::Approx(0.5));
  const std::vector<int> one{1, 1, 1, 1};
  CHECK_THROWS_AS(macro_ovr_auroc(probs, one), ValidationError);
}

}
