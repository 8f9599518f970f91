#include <doctest.h>

#include <cmath>

#include "impairdetect/rng.hpp"
#include "impairdetect/windowing.hpp"

using namespace impairdetect;

namespace {

SampleSeries regular(Modality m, double start, double end, double rate, double keep = 1.0, Rng* rng = nullptr) {
  SampleSeries s{m, {}};
  const auto n = static_cast<long long>(std::floor((end - start) * rate));
  for (long long k = 0; k <= n; ++k) {
    if (rng && rng->uniform() >= keep) continue;
    s.samples.push_back({start + double(k) / rate, 0.5 + 0.001 * double(k % 100)});
  }
  return s;
}

}  // namespace

TEST_SUITE("windowing") {

TEST_CASE("candidate window count") {
  WindowSpec s{180, 45, 0.5, Pipeline::feature};
  CHECK(candidate_window_count(2400, s) == 50);
  CHECK(candidate_window_count(179, s) == 0);
  CHECK(candidate_window_count(180, s) == 1);
}

TEST_CASE("quarter-step rule") {
  CHECK(WindowSpec::quarter_step(600).step_s == 150.0);
  CHECK(WindowSpec::quarter_step(30).step_s == 7.5);
  CHECK(WindowSpec::feature_default().step_s == 45.0);
  CHECK(WindowSpec::cnn_default().step_s == 15.0);
  CHECK(WindowSpec::cnn_default().min_coverage == doctest::Approx(1.0 / 3.0));
  WindowSpec bad{60, 90, 0.5, Pipeline::feature};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  WindowSpec bad2{60, 10, 0.0, Pipeline::feature};
  CHECK_THROWS_AS(bad2.validate(), ValidationError);
}

TEST_CASE("resampling onto regular grids") {
  const auto full = regular(Modality::arousal_prob, 0.0, 179.0, 1.0);
  auto g = resample_to_grid(full, 0.0, 180.0, 1.0);
  REQUIRE(g.values.size() == 180);
  CHECK(g.coverage == 1.0);
  for (std::size_t k = 0; k < 180; ++k) CHECK(g.values[k] == full.samples[k].value);

  SampleSeries half{Modality::arousal_prob, {}};
  for (int k = 0; k < 180; k += 2) half.samples.push_back({double(k), 0.3});
  CHECK(resample_to_grid(half, 0.0, 180.0, 1.0).coverage == 0.5);

  const auto acc = regular(Modality::accel_mag_g, 10.0, 190.0, 25.0);
  auto ga = resample_to_grid(acc, 10.0, 180.0, 25.0);
  CHECK(ga.values.size() == 4500);
  CHECK(ga.coverage == 1.0);
}

TEST_CASE("imputation") {
  const double nan = std::nan("");
  CHECK(impute({1, nan, 3}) == std::vector<double>{1, 2, 3});
  CHECK(impute({nan, nan, 5, 7}) == std::vector<double>{5, 5, 5, 7});
  CHECK(impute({4}) == std::vector<double>{4});
  CHECK(impute({2, 6, nan, nan}) == std::vector<double>{2, 6, 6, 6});
  CHECK_THROWS_AS(impute({nan, nan}), ValidationError);

  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(30);
    for (auto& v : g) v = rng.normal();
    const auto complete = g;
    CHECK(impute(complete) == complete);
    for (auto& v : g) {
      if (rng.uniform() < 0.4) v = nan;
    }
    g.front() = 0.0;
    g.back() = 1.0;
    double lo = 1e9, hi = -1e9;
    for (double v : g) {
      if (!std::isnan(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    for (double v : impute(g)) {
      CHECK(v >= lo);
      CHECK(v <= hi);
    }
  }
}

TEST_CASE("coverage gate differs between pipelines") {
  // 40% of the arousal samples present in every window.
  SampleSeries ar{Modality::arousal_prob, {}};
  for (int k = 0; k <= 600; ++k) {
    if (k % 5 < 2) ar.samples.push_back({double(k), 0.4});
  }
  const auto acc = regular(Modality::accel_mag_g, 0.0, 600.0, 25.0);
  std::vector<DrivingPhase> phases{{1, 0.0, 600.0, {}}};
  SegmentInput in{"P", Group::placebo, &ar, &acc, &phases};
  WindowSpec feature{180, 45, 0.5, Pipeline::feature};
  SegmentStats st;
  CHECK(segment(in, feature, &st).empty());
  CHECK(st.dropped_coverage == st.candidates);
  WindowSpec cnn{180, 45, 1.0 / 3.0, Pipeline::cnn};
  CHECK(segment(in, cnn).size() == candidate_window_count(600, cnn));
}

TEST_CASE("segmentation matches the closed form on random combinations") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const double len = std::round(rng.uniform(20, 200));
    const double step = std::max(1.0, std::round(rng.uniform(0.1, 1.0) * len * 4) / 4);
    const double phase_len = std::round(rng.uniform(0.5, 4.0) * len);
    const double keep = rng.uniform(0.2, 1.0);
    const double p0 = 100.0 + 10.0 * trial;
    std::vector<DrivingPhase> phases{{1, p0, p0 + phase_len, {}}};
    const auto ar = regular(Modality::arousal_prob, p0 - 5, p0 + phase_len + 5, 1.0, keep, &rng);
    const auto acc = regular(Modality::accel_mag_g, p0 - 5, p0 + phase_len + 5, 25.0);
    WindowSpec spec{len, step, 0.5, Pipeline::feature};
    SegmentStats st;
    const auto ws = segment({"X", Group::treatment, &ar, &acc, &phases}, spec, &st);
    const std::size_t expected = candidate_window_count(phase_len, spec);
    CHECK(st.candidates == expected);
    CHECK(ws.size() == expected - st.dropped_coverage);
    for (const auto& w : ws) {
      CHECK(w.start_s >= p0);
      CHECK(w.end_s() <= p0 + phase_len + 1e-9);
      CHECK(std::fmod(w.start_s - p0, step) == doctest::Approx(0.0));
      CHECK(w.arousal_coverage >= 0.5);
      CHECK(w.arousal_grid.size() == static_cast<std::size_t>(len));
    }
  }
}

TEST_CASE("feature and cnn pipelines share window starts") {
  const auto ar = regular(Modality::arousal_prob, 0.0, 900.0, 1.0);
  const auto acc = regular(Modality::accel_mag_g, 0.0, 900.0, 25.0);
  std::vector<DrivingPhase> phases{{1, 0.0, 400.0, {}}, {2, 500.0, 900.0, {}}};
  SegmentInput in{"T", Group::treatment, &ar, &acc, &phases};
  const auto a = segment(in, WindowSpec{180, 15, 0.5, Pipeline::feature});
  const auto b = segment(in, WindowSpec{180, 15, 1.0 / 3.0, Pipeline::cnn});
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].start_s == b[i].start_s);
    CHECK(a[i].phase_index == b[i].phase_index);
    // Never crosses a boundary.
    const auto& ph = phases[static_cast<std::size_t>(a[i].phase_index - 1)];
    CHECK(a[i].start_s >= ph.start_s);
    CHECK(a[i].end_s() <= ph.end_s);
    CHECK(b[i].accel_grid.size() == 4500);
  }
}

}
