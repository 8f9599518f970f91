#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "impairdetect/rng.hpp"
#include "impairdetect/training.hpp"
#include "support.hpp"

using namespace impairdetect;
using namespace impairdetect::nn;

namespace {

// Class 1 windows have a larger arousal level and accel variance.
CnnData toy_data(std::size_t n, std::uint64_t seed) {
  CnnData d;
  d.arousal_length = 24;
  d.accel_length = 48;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    for (std::size_t t = 0; t < d.arousal_length; ++t) d.arousal.push_back(static_cast<float>(0.4 * y + 0.2 * rng.normal()));
    for (std::size_t t = 0; t < d.accel_length; ++t) d.accel.push_back(static_cast<float>((1.0 + y) * rng.normal()));
    d.targets.push_back(y);
    WindowRef r;
    r.participant_id = "P" + std::to_string(i % 5);
    r.start_s = static_cast<double>(i);
    r.length_s = 10.0;
    d.refs.push_back(r);
  }
  return d;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.arch.arousal_length = 24;
  c.arch.accel_length = 48;
  c.arch.arousal_tower = {{4, 8}, 5, 2};
  c.arch.accel_tower = {{4, 8}, 7, 2};
  c.arch.hidden = 8;
  c.max_epochs = 8;
  c.batch_size = 16;
  c.seed = 3;
  c.optimizer.lr = 3e-3;
  return c;
}

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> v;
  for (auto i = lo; i < hi; ++i) v.push_back(i);
  return v;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("zero learning rate leaves the initial weights") {
  const auto d = toy_data(64, 1);
  auto cfg = toy_config();
  cfg.optimizer.lr = 0.0;
  cfg.optimizer.weight_decay = 0.0;
  cfg.max_epochs = 2;
  const auto m = train_cnn(d, range(0, 48), range(48, 64), cfg);
  TwoTowerCnn<float> fresh(cfg.arch, cfg.seed);
  // trainable parameters come first in the state; running statistics follow
  std::size_t params = 0;
  for (auto* p : fresh.params()) params += p->size();
  const auto init = fresh.state();
  REQUIRE(m.state.size() == init.size());
  CHECK(std::equal(init.begin(), init.begin() + static_cast<std::ptrdiff_t>(params), m.state.begin()));
}

TEST_CASE("training loss decreases and predictions separate") {
  const auto d = toy_data(200, 2);
  auto cfg = toy_config();
  const auto m = train_cnn(d, range(0, 160), range(160, 200), cfg);
  REQUIRE(m.history.epochs.size() >= 2);
  CHECK(m.history.epochs.back().train_loss < m.history.epochs.front().train_loss);
  CHECK(m.history.metric == "val_auroc");
  CHECK(m.history.best_metric > 0.8);
  const auto p = predict_cnn(m, d, range(160, 200));
  for (const auto& v : p) {
    REQUIRE(v.size() == 1);
    CHECK(v[0] >= 0.0);
    CHECK(v[0] <= 1.0);
  }
  CHECK(predict_cnn(m, d, range(160, 200)) == p);
}

TEST_CASE("history is bit-stable for a fixed seed") {
  const auto d = toy_data(96, 4);
  auto cfg = toy_config();
  cfg.max_epochs = 3;
  const auto a = train_cnn(d, range(0, 64), range(64, 96), cfg);
  const auto b = train_cnn(d, range(0, 64), range(64, 96), cfg);
  CHECK(a.history.to_json().dump() == b.history.to_json().dump());
  CHECK(a.state == b.state);
  cfg.seed = 4;
  const auto c = train_cnn(d, range(0, 64), range(64, 96), cfg);
  CHECK(c.state != a.state);
}

TEST_CASE("categorical and regression heads") {
  auto d = toy_data(60, 5);
  auto cfg = toy_config();
  cfg.max_epochs = 2;
  for (std::size_t i = 0; i < d.size(); ++i) d.targets[i] = static_cast<double>(i % 3 + 1);
  cfg.task = Task::phase_categorical;
  const auto m = train_cnn(d, range(0, 45), range(45, 60), cfg);
  CHECK(m.history.metric == "val_macro_auroc");
  for (const auto& v : predict_cnn(m, d, range(45, 60))) {
    REQUIRE(v.size() == 3);
    CHECK(v[0] + v[1] + v[2] == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (std::size_t i = 0; i < d.size(); ++i) d.targets[i] = 0.01 * static_cast<double>(i % 9);
  cfg.task = Task::bac_regression;
  const auto r = train_cnn(d, range(0, 45), range(45, 60), cfg);
  CHECK(r.history.metric == "neg_val_loss");
  CHECK(output_count(Task::bac_regression) == 1);
  CHECK(output_count(Task::phase_categorical) == 3);
}

TEST_CASE("save and load reproduce predictions") {
  const auto d = toy_data(64, 6);
  auto cfg = toy_config();
  cfg.max_epochs = 2;
  const auto m = train_cnn(d, range(0, 48), range(48, 64), cfg);
  testing::TempDir tmp("cnn");
  m.save(tmp.path());
  const auto back = CnnModel::load(tmp.path());
  CHECK(back.state == m.state);
  CHECK(predict_cnn(back, d, range(0, 64)) == predict_cnn(m, d, range(0, 64)));
  CHECK_THROWS(CnnModel::load(tmp / "missing"));
}

TEST_CASE("invalid inputs") {
  const auto d = toy_data(10, 7);
  auto cfg = toy_config();
  CHECK_THROWS_AS(train_cnn(d, range(0, 1), range(5, 10), cfg), ValidationError);
  CHECK_THROWS_AS(train_cnn(d, range(0, 5), {}, cfg), ValidationError);
  cfg.class_weights = {1.0, 1.0, 1.0};
  CHECK_THROWS_AS(train_cnn(d, range(0, 5), range(5, 10), cfg), ValidationError);
}

}
