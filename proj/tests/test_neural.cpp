#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "impairdetect/neural.hpp"

using namespace impairdetect;
using namespace impairdetect::nn;

TEST_SUITE("neural") {

TEST_CASE("conv1d forward example") {
  Conv1d<double> conv(1, 1, 3, 1, 1);
  conv.weight.value = {1.0, 0.0, -1.0};
  conv.bias.value = {0.5};
  Tensor<double> x({1, 1, 4}, {1, 2, 3, 4});
  const auto y = conv.forward(x);
  REQUIRE(y.shape == std::vector<std::size_t>{1, 1, 4});
  // cross-correlation: y_t = x_{t-1} - x_{t+1} + 0.5
  CHECK(y.data == AlignedVector<double>{-1.5, -1.5, -1.5, 3.5});
  Conv1d<double> strided(1, 1, 5, 2, 2);
  CHECK(strided.out_length(180) == 90);
  CHECK(strided.out_length(23) == 12);
}

TEST_CASE("batch norm normalizes in training and uses running stats in evaluation") {
  BatchNorm1d<double> bn(1);
  Tensor<double> x({2, 1, 2}, {1, 2, 3, 4});
  const auto y = bn.forward(x, true);
  double mean = 0.0;
  for (double v : y.data) mean += v / 4;
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y.data[0] == doctest::Approx(-1.5 / std::sqrt(1.25 + 1e-5)));
  // momentum 0.1 from (0, 1) with unbiased variance 5/3
  CHECK(bn.running_mean[0] == doctest::Approx(0.25));
  CHECK(bn.running_var[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
  const auto e = bn.forward(x, false);
  CHECK(e.data[0] == doctest::Approx((1.0 - 0.25) / std::sqrt(bn.running_var[0] + 1e-5)));
}

TEST_CASE("pooling and relu") {
  ReLU<double> relu;
  GlobalAvgPool<double> pool;
  Tensor<double> x({1, 2, 3}, {-1, 2, 4, 0, -3, 3});
  const auto y = pool.forward(relu.forward(x));
  CHECK(y.shape == std::vector<std::size_t>{1, 2});
  CHECK(y.data[0] == doctest::Approx(2.0));
  CHECK(y.data[1] == doctest::Approx(1.0));
}

TEST_CASE("loss values") {
  Tensor<double> z({2, 1}, {0.0, std::log(3.0)});
  const std::vector<double> y{1.0, 0.0};
  const auto b = weighted_bce_with_logits(z, y, {1.0, 1.0});
  CHECK(b.loss == doctest::Approx((std::log(2.0) + std::log(4.0)) / 2));
  CHECK(b.grad.data[0] == doctest::Approx(-0.25));
  CHECK(b.grad.data[1] == doctest::Approx(0.375));
  const auto bw = weighted_bce_with_logits(z, y, {2.0, 1.0});
  CHECK(bw.loss == doctest::Approx((std::log(2.0) + 2 * std::log(4.0)) / 2));
  // huge logits stay finite
  Tensor<double> big({1, 1}, {800.0});
  CHECK(weighted_bce_with_logits(big, std::vector<double>{0.0}, {1.0, 1.0}).loss == doctest::Approx(800.0));

  Tensor<double> l({1, 3}, {0.0, 0.0, 0.0});
  CHECK(cross_entropy(l, std::vector<int>{2}).loss == doctest::Approx(std::log(3.0)));
  Tensor<double> r({2, 1}, {0.5, 3.0});
  CHECK(smooth_l1(r, std::vector<double>{0.0, 0.0}).loss == doctest::Approx((0.125 + 2.5) / 2));
}

TEST_CASE("finite-difference gradients") {
  const auto r = testing::run_gradient_checks(60, 123);
  INFO(r.worst_case);
  CHECK(r.cases == 60);
  CHECK(r.worst < 1e-4);
}

TEST_CASE("dropout keeps the expectation") {
  Dropout<double> d(0.3);
  Rng rng(2);
  Tensor<double> x({1, 100000});
  for (auto& v : x.data) v = 1.0;
  const auto y = d.forward(x, true, rng);
  double mean = 0.0;
  std::size_t zeros = 0;
  for (double v : y.data) {
    mean += v / static_cast<double>(y.size());
    zeros += v == 0.0;
  }
  CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
  CHECK(static_cast<double>(zeros) / 1e5 == doctest::Approx(0.3).epsilon(0.03));
  const auto e = d.forward(x, false, rng);
  CHECK(e.data == x.data);
}

TEST_CASE("tower shapes of the default architecture") {
  CnnArch arch;
  TwoTowerCnn<float> net(arch, 1);
  Tensor<float> a({2, 1, 180}), c({2, 1, 4500});
  const auto out = net.forward(a, c, false);
  CHECK(out.shape == std::vector<std::size_t>{2, 1});
  std::vector<std::pair<std::size_t, std::size_t>> at{{16, 90}, {32, 45}, {64, 23}};
  std::vector<std::pair<std::size_t, std::size_t>> ct{{32, 2250}, {64, 1125}, {128, 563}, {128, 282}};
  CHECK(net.arousal_tower()->trace() == at);
  CHECK(net.accel_tower()->trace() == ct);
  CHECK(arch.embedding_dim() == 64 + 128);
}

TEST_CASE("state round trip and seeded init") {
  CnnArch arch;
  arch.arousal_length = 32;
  arch.accel_length = 64;
  TwoTowerCnn<float> a(arch, 5), b(arch, 5), c(arch, 6);
  CHECK(a.state() == b.state());
  CHECK(a.state() != c.state());
  c.load_state(a.state());
  CHECK(c.state() == a.state());
  std::size_t total = 0;
  for (const auto& [name, shape] : a.state_layout()) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    total += n;
  }
  CHECK(total == a.state().size());
}

TEST_CASE("AdamW step and plateau schedule") {
  Param<double> p{"w", {1}, {1.0}, {0.5}, true};
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW<double> opt({&p}, cfg);
  opt.step();
  // first bias-corrected step moves by lr * g / |g|
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-6));
  AdamWConfig zero = cfg;
  zero.lr = 0.0;
  Param<double> q{"w", {1}, {1.0}, {0.5}, true};
  AdamW<double> still({&q}, zero);
  still.step();
  CHECK(q.value[0] == 1.0);

  PlateauScheduler s(0.5, 2);
  double lr = 1.0;
  lr = s.step(0.8, lr);
  lr = s.step(0.8, lr);
  lr = s.step(0.8, lr);
  CHECK(lr == 1.0);
  // two bad epochs are tolerated, the third one cuts the rate
  lr = s.step(0.8, lr);
  CHECK(lr == 0.5);
  CHECK(s.bad_epochs() == 0);
}

}
