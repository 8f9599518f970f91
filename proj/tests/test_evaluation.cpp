#include <doctest.h>

#include <set>

#include "impairdetect/evaluation.hpp"
#include "support.hpp"

using namespace impairdetect;

namespace {

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back("P" + std::to_string(100 + i));
  return v;
}

WindowPrediction pred(const std::string& id, Group g, double elapsed, int label, double score, int phase = 2) {
  WindowPrediction p;
  p.participant_id = id;
  p.group = g;
  p.phase_index = phase;
  p.elapsed_s = elapsed;
  p.start_s = elapsed;
  p.label = label;
  p.score = score;
  return p;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("validation sizes") {
  CHECK(loso_validation_size(54) == 10);
  CHECK(loso_validation_size(12) == 2);
  CHECK(loso_validation_size(22) == 4);
  CHECK(loso_validation_size(4) == 2);
  CHECK_THROWS_AS(loso_validation_size(3), ValidationError);
}

TEST_CASE("LOSO plan structure") {
  const auto v = ids(54);
  const auto plan = make_loso_plan(v, 7);
  REQUIRE(plan.folds.size() == 54);
  std::set<std::string> held;
  for (const auto& f : plan.folds) {
    held.insert(f.held_out);
    CHECK(f.validation.size() == 10);
    CHECK(f.train.size() == 43);
    std::set<std::string> all(f.train.begin(), f.train.end());
    all.insert(f.validation.begin(), f.validation.end());
    CHECK(all.size() == 53);
    CHECK(all.count(f.held_out) == 0);
  }
  CHECK(held.size() == 54);
  CHECK(plan.warnings.empty());
  const auto again = make_loso_plan(v, 7);
  CHECK(again.to_json() == plan.to_json());
  CHECK(LosoPlan::from_json(plan.to_json()).to_json() == plan.to_json());
  CHECK(make_loso_plan(v, 8).to_json() != plan.to_json());
  const auto small = make_loso_plan(ids(12), 1);
  CHECK(small.validation_size == 2);
  CHECK_FALSE(small.warnings.empty());
  auto dup = ids(5);
  dup[3] = dup[1];
  CHECK_THROWS_AS(make_loso_plan(dup, 0), ValidationError);
}

TEST_CASE("aggregate excludes single-class participants from macro stats") {
  std::vector<WindowPrediction> p{
      pred("A", Group::treatment, 10, 0, 0.1), pred("A", Group::treatment, 20, 1, 0.9),
      pred("B", Group::treatment, 10, 0, 0.6), pred("B", Group::treatment, 20, 1, 0.4),
      pred("C", Group::placebo, 10, 0, 0.2),   pred("C", Group::placebo, 20, 0, 0.3),
  };
  const auto r = aggregate(p, Task::early_warning, "lr");
  CHECK(r.excluded == std::vector<std::string>{"C"});
  CHECK(r.macro_auroc.n == 2);
  CHECK(r.macro_auroc.mean == doctest::Approx(0.5));
  CHECK(r.macro_auroc.std == doctest::Approx(0.5));
  CHECK(r.pooled_treatment.windows == 4);
  CHECK(r.pooled_all.windows == 6);
  CHECK(r.pooled_all.defined);
  CHECK(r.pooled_treatment.random_auprc == doctest::Approx(0.5));
}

TEST_CASE("per-participant offsets break pooled ranking but not macro") {
  // both participants rank perfectly but B's scores sit above A's
  std::vector<WindowPrediction> p{
      pred("A", Group::treatment, 10, 0, 0.1), pred("A", Group::treatment, 20, 1, 0.2),
      pred("B", Group::treatment, 10, 0, 0.8), pred("B", Group::treatment, 20, 1, 0.9),
  };
  const auto r = aggregate(p, Task::early_warning, "lr");
  CHECK(r.macro_auroc.mean == 1.0);
  CHECK(r.pooled_treatment.auroc == doctest::Approx(0.75));
}

TEST_CASE("single-class pooled scope is undefined") {
  std::vector<WindowPrediction> p{pred("A", Group::placebo, 10, 0, 0.1), pred("A", Group::placebo, 20, 0, 0.2)};
  const auto r = aggregate(p, Task::early_warning, "lr");
  CHECK_FALSE(r.pooled_all.defined);
  CHECK(r.macro_auroc.n == 0);
}

TEST_CASE("cumulative moving average") {
  std::vector<WindowPrediction> p;
  // treatment segment rises, control stays flat
  for (int t = 0; t < 20; ++t) {
    p.push_back(pred("T", Group::treatment, 15.0 * t, 1, t % 2 ? 0.8 : 0.6));
    p.push_back(pred("C", Group::placebo, 15.0 * t, 0, t % 2 ? 0.7 : 0.1));
  }
  const auto cma = cma_smooth(p, 15.0, 180.0, 0.99);
  CHECK(cma.smoothed.size() == 40);
  // T: bins alternate 0.6, 0.8 -> cumulative mean of first two is 0.7
  for (const auto& s : cma.smoothed) {
    if (s.participant_id == "T" && s.elapsed_s == 15.0) CHECK(s.score == doctest::Approx(0.7));
    if (s.participant_id == "C" && s.elapsed_s == 15.0) CHECK(s.score == doctest::Approx(0.4));
  }
  REQUIRE_FALSE(cma.curve.empty());
  CHECK(cma.curve.front().elapsed_s == 180.0);
  CHECK(cma.curve.back().auroc == 1.0);
  CHECK_THROWS_AS(cma_smooth(p, 0.0), ValidationError);
}

TEST_CASE("predictions csv round trip") {
  testing::TempDir tmp("preds");
  std::vector<WindowPrediction> p{pred("A", Group::treatment, 10, 1, 0.123456789012345),
                                  pred("B", Group::placebo, 20.5, 0, 1e-9, 3)};
  p[1].class_probs = {0.2, 0.3, 0.5};
  write_predictions(p, tmp / "p.csv");
  const auto back = read_predictions(tmp / "p.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].score == p[0].score);
  CHECK(back[1].participant_id == "B");
  CHECK(back[1].group == Group::placebo);
  CHECK(back[1].phase_index == 3);
  CHECK(back[1].class_probs == p[1].class_probs);
}

}
