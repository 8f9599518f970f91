#include <doctest.h>

#include <cmath>

#include "impairdetect/linear_model.hpp"
#include "impairdetect/rng.hpp"
#include "impairdetect/types.hpp"

using namespace impairdetect;

namespace {

struct Problem {
  Eigen::MatrixXd x;
  std::vector<int> y;
};

Problem random_problem(int n, int d, std::uint64_t seed, double signal = 1.0) {
  Rng rng(seed);
  Problem p{Eigen::MatrixXd(n, d), std::vector<int>(n)};
  for (int i = 0; i < n; ++i) {
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      p.x(i, j) = rng.normal();
      if (j < 2) z += signal * p.x(i, j);
    }
    p.y[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-z)) ? 1 : 0;
  }
  p.y[0] = 0;
  p.y[1] = 1;
  return p;
}

}  // namespace

TEST_SUITE("linear_model") {

TEST_CASE("lambda above lambda_max keeps every weight at zero") {
  auto p = random_problem(60, 6, 1);
  const auto cw = balanced_class_weights(p.y);
  const double lmax = lambda_max(p.x, p.y, cw);
  LassoConfig cfg;
  cfg.lambda = lmax * 1.0001;
  auto m = fit_lasso_logit(p.x, p.y, cfg);
  for (double w : m.weights) CHECK(w == 0.0);
  cfg.lambda = 1e6;
  m = fit_lasso_logit(p.x, p.y, cfg);
  for (double w : m.weights) CHECK(w == 0.0);
  // balanced weights -> bias 0 at the all-zero solution
  CHECK(std::abs(m.bias) < 1e-6);
  cfg.lambda = lmax * 0.9;
  m = fit_lasso_logit(p.x, p.y, cfg);
  bool any = false;
  for (double w : m.weights) any = any || w != 0.0;
  CHECK(any);
}

TEST_CASE("balanced class weights") {
  const std::vector<int> y{0, 0, 0, 1};
  const auto w = balanced_class_weights(y);
  CHECK(w[0] == doctest::Approx(4.0 / 6.0));
  CHECK(w[1] == doctest::Approx(2.0));
  const std::vector<int> one{1, 1};
  CHECK_THROWS_AS(balanced_class_weights(one), ValidationError);
}

TEST_CASE("KKT and monotone objective on a small problem") {
  auto p = random_problem(20, 5, 3);
  LassoConfig cfg;
  cfg.lambda_ratio = 0.05;
  auto m = fit_lasso_logit(p.x, p.y, cfg);
  CHECK(m.converged);
  CHECK(kkt_residual(m, p.x, p.y) <= 1e-6);
  for (std::size_t i = 1; i < m.objective_history.size(); ++i) {
    CHECK(m.objective_history[i] <= m.objective_history[i - 1] + 1e-15);
  }
  CHECK(lasso_objective(m, p.x, p.y) == doctest::Approx(m.objective_history.back()));
}

TEST_CASE("solution stays bounded on separable data") {
  Eigen::MatrixXd x(6, 1);
  x << -3, -2, -1, 1, 2, 3;
  const std::vector<int> y{0, 0, 0, 1, 1, 1};
  LassoConfig cfg;
  cfg.lambda = 0.01;
  auto m = fit_lasso_logit(x, y, cfg);
  CHECK(m.converged);
  CHECK(m.weights[0] > 0.0);
  CHECK(std::isfinite(m.weights[0]));
  const auto pr = predict_proba(m, x);
  for (int i = 0; i < 3; ++i) CHECK(pr[i] < 0.5);
  for (int i = 3; i < 6; ++i) CHECK(pr[i] > 0.5);
}

TEST_CASE("unpenalized separable pair runs to the iteration cap") {
  Eigen::MatrixXd x(2, 1);
  x << -1.0, 1.0;
  const std::vector<int> y{0, 1};
  LassoConfig cfg;
  cfg.lambda = 0.0;
  cfg.max_iter = 25;
  // no finite minimizer: the gradient only tends to zero, so with a zero
  // tolerance the iteration cap is what stops the fit
  cfg.tol = 0.0;
  const auto m = fit_lasso_logit(x, y, cfg);
  CHECK_FALSE(m.converged);
  CHECK(m.objective_history.size() == 25);
  for (std::size_t i = 1; i < m.objective_history.size(); ++i) {
    CHECK(m.objective_history[i] < m.objective_history[i - 1]);
  }
  const auto p = predict_proba(m, x);
  CHECK(p[1] > p[0]);
}

TEST_CASE("predicted probability of a known logit") {
  LassoLogitModel m;
  m.weights = {1.0, 0.0};
  m.bias = 0.0;
  Eigen::MatrixXd x(3, 2);
  x << std::log(3.0), 5.0, 0.0, 0.0, -std::log(3.0), 1.0;
  const auto p = predict_proba(m, x);
  CHECK(p[0] == doctest::Approx(0.75));
  CHECK(p[1] == doctest::Approx(0.5));
  CHECK(p[2] == doctest::Approx(0.25));

  m.weights = {2.0, -1.0};
  Eigen::MatrixXd grid(50, 2);
  for (int i = 0; i < 50; ++i) grid.row(i) << i * 0.1, 0.3;
  const auto q = predict_proba(m, grid);
  for (int i = 1; i < 50; ++i) CHECK(q[i] > q[i - 1]);
}

TEST_CASE("duplicated columns split the weight") {
  auto p = random_problem(200, 3, 5, 2.0);
  Eigen::MatrixXd dup(p.x.rows(), 4);
  dup << p.x, p.x.col(0);
  LassoConfig cfg;
  cfg.lambda_ratio = 0.1;
  auto a = fit_lasso_logit(p.x, p.y, cfg);
  LassoConfig cfg2 = cfg;
  cfg2.lambda = a.lambda;
  auto b = fit_lasso_logit(dup, p.y, cfg2);
  CHECK(b.converged);
  // the L1 problem is indifferent to how the weight splits, but the total is fixed
  CHECK(b.weights[0] + b.weights[3] == doctest::Approx(a.weights[0]).epsilon(1e-3));
  CHECK(lasso_objective(b, dup, p.y) == doctest::Approx(lasso_objective(a, p.x, p.y)).epsilon(1e-8));
}

TEST_CASE("balanced weights raise minority recall") {
  Rng rng(9);
  const int n = 400;
  Eigen::MatrixXd x(n, 1);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = i < 40 ? 1 : 0;
    x(i, 0) = rng.normal() + (y[i] ? 1.0 : 0.0);
  }
  LassoConfig plain;
  plain.lambda = 1e-4;
  plain.class_weights = {1.0, 1.0};
  LassoConfig bal;
  bal.lambda = 1e-4;
  auto recall = [&](const LassoLogitModel& m) {
    const auto p = predict_proba(m, x);
    int hit = 0;
    for (int i = 0; i < 40; ++i) hit += p[i] > 0.5;
    return hit / 40.0;
  };
  CHECK(recall(fit_lasso_logit(x, y, bal)) > recall(fit_lasso_logit(x, y, plain)));
}

TEST_CASE("model json round trip") {
  auto p = random_problem(40, 3, 12);
  auto m = fit_lasso_logit(p.x, p.y);
  m.columns = {{"arousal__mean", "summary", FeatureModality::arousal},
               {"arousal__variance", "summary", FeatureModality::arousal},
               {"accel__mean", "summary", FeatureModality::accel}};
  const auto back = LassoLogitModel::from_json(m.to_json());
  CHECK(back.weights == m.weights);
  CHECK(back.bias == m.bias);
  CHECK(back.column_metadata_hash() == m.column_metadata_hash());
}

TEST_CASE("family coefficient report") {
  const std::vector<FeatureColumn> cols{{"arousal__a", "summary", FeatureModality::arousal},
                                        {"arousal__b", "summary", FeatureModality::arousal},
                                        {"arousal__c", "entropy", FeatureModality::arousal},
                                        {"accel__a", "summary", FeatureModality::accel}};
  LassoLogitModel f1, f2;
  f1.columns = {cols[0], cols[1], cols[3]};
  f1.weights = {1.0, -3.0, 0.5};
  f2.columns = {cols[0], cols[3]};
  f2.weights = {0.0, 1.5};
  const std::vector<LassoLogitModel> models{f1, f2};
  const auto rep = coefficient_family_report(models, cols, "early");
  auto find = [&](FeatureModality m, const std::string& fam) {
    for (const auto& r : rep) {
      if (r.modality == m && r.family == fam) return r;
    }
    FAIL("family not reported");
    return FamilyCoefficient{};
  };
  const auto s = find(FeatureModality::arousal, "summary");
  // fold 1: (1 + 3) / 2 = 2, fold 2: 0
  CHECK(s.mean == doctest::Approx(1.0));
  CHECK(s.std == doctest::Approx(1.0));
  const auto e = find(FeatureModality::arousal, "entropy");
  CHECK(e.missing);
  const auto a = find(FeatureModality::accel, "summary");
  CHECK(a.mean == doctest::Approx(1.0));
  CHECK(a.std == doctest::Approx(0.5));
}

}
