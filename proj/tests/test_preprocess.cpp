#include <doctest.h>

#include <cmath>

#include "impairdetect/preprocess.hpp"
#include "impairdetect/rng.hpp"
#include "impairdetect/stats.hpp"

using namespace impairdetect;

namespace {

SampleSeries series(Modality m, std::vector<double> values, double dt = 1.0) {
  SampleSeries s{m, {}};
  for (std::size_t i = 0; i < values.size(); ++i) s.samples.push_back({dt * static_cast<double>(i), values[i]});
  return s;
}

}  // namespace

TEST_SUITE("preprocess") {

TEST_CASE("outlier removal keeps physiological samples") {
  CHECK(remove_outliers(series(Modality::ibi_ms, {800, 810, 5000, 805})).values() ==
        std::vector<double>{800, 810, 805});
  const auto same = series(Modality::ibi_ms, {800, 820, 790, 805});
  CHECK(remove_outliers(same).samples == same.samples);
  CHECK(remove_outliers(series(Modality::hr_bpm, {25, 70, 75})).values() == std::vector<double>{70, 75});
  // A jump of more than 50% relative to the previous kept beat is dropped.
  CHECK(remove_outliers(series(Modality::ibi_ms, {800, 1300, 810})).values() == std::vector<double>{800, 810});
  CHECK_THROWS_AS(remove_outliers(series(Modality::accel_mag_g, {1.0})), ValidationError);
}

TEST_CASE("z-score normalization") {
  auto r = zscore_normalize(series(Modality::hr_bpm, {1, 2, 3}), NormScope::participant);
  const auto v = r.series.values();
  CHECK(stats::mean(v) == doctest::Approx(0.0));
  CHECK(stats::stddev(v) == doctest::Approx(1.0));

  auto c = zscore_normalize(series(Modality::hr_bpm, {4, 4, 4}), NormScope::participant);
  CHECK(c.stats[0].zero_variance);
  for (double x : c.series.values()) CHECK(x == 0.0);

  // Two phases with different levels: each ends up at mean 0, std 1.
  SampleSeries two{Modality::hr_bpm, {}};
  Rng rng(3);
  for (int i = 0; i < 100; ++i) two.samples.push_back({double(i), 60 + 5 * rng.normal()});
  for (int i = 200; i < 300; ++i) two.samples.push_back({double(i), 90 + 2 * rng.normal()});
  std::vector<DrivingPhase> phases{{1, 0, 99, {}}, {2, 200, 299, {}}};
  auto pr = zscore_normalize(two, NormScope::participant_phase, phases);
  REQUIRE(pr.stats.size() == 2);
  for (int p = 0; p < 2; ++p) {
    std::vector<double> part;
    for (const auto& s : pr.series.samples) {
      if (phases[p].contains(s.t)) part.push_back(s.value);
    }
    CHECK(stats::mean(part) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(stats::stddev(part) == doctest::Approx(1.0));
  }

  // Idempotent up to rounding.
  auto again = zscore_normalize(r.series, NormScope::participant);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(again.series.samples[i].value - v[i]) < 1e-9);
}

TEST_CASE("short-window arousal features") {
  SampleSeries ibi{Modality::ibi_ms, {{1.0, 800}, {2.0, 810}, {3.0, 790}}};
  SampleSeries hr{Modality::hr_bpm, {{1.0, 70}, {2.0, 72}, {3.0, 74}}};
  auto rows = compute_arousal_features(ibi, hr, 60.0, 100.0);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].ibi_rmssd == doctest::Approx(std::sqrt((100.0 + 400.0) / 2.0)));
  CHECK(rows[0].ibi_rmssd == doctest::Approx(15.8114).epsilon(1e-5));

  SampleSeries flat{Modality::ibi_ms, {{1.0, 800}, {2.0, 800}, {3.0, 800}, {4.0, 800}}};
  auto fr = compute_arousal_features(flat, hr, 60.0, 100.0);
  REQUIRE(fr.size() == 1);
  CHECK(fr[0].ibi_rmssd == 0.0);
  CHECK(fr[0].ibi_std == 0.0);

  std::vector<double> ten{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(stats::quantile(ten, 0.2) == doctest::Approx(2.8));
  CHECK(stats::quantile(ten, 0.8) == doctest::Approx(8.2));

  // Fewer than three beats: skipped.
  SampleSeries two{Modality::ibi_ms, {{1.0, 800}, {2.0, 810}}};
  CHECK(compute_arousal_features(two, hr, 60.0, 100.0).empty());
  CHECK_THROWS_AS(compute_arousal_features(SampleSeries{Modality::ibi_ms, {}}, hr), ValidationError);
}

TEST_CASE("percentile ordering holds on every window") {
  Rng rng(5);
  SampleSeries ibi{Modality::ibi_ms, {}}, hr{Modality::hr_bpm, {}};
  double t = 0;
  for (int i = 0; i < 400; ++i) {
    t += 0.8 + 0.1 * rng.uniform();
    ibi.samples.push_back({t, rng.normal()});
  }
  for (int s = 0; s < 320; ++s) hr.samples.push_back({double(s), rng.normal()});
  for (const auto& r : compute_arousal_features(ibi, hr)) {
    CHECK(r.ibi_min <= r.ibi_p20);
    CHECK(r.ibi_p20 <= r.ibi_median);
    CHECK(r.ibi_median <= r.ibi_p80);
    CHECK(r.ibi_p80 <= r.ibi_max);
    CHECK(r.hr_p20 <= r.hr_median);
    CHECK(r.hr_median <= r.hr_p80);
    CHECK(r.ibi_std >= 0);
    CHECK(r.ibi_rmssd >= 0);
  }
}

TEST_CASE("logistic surrogate estimator") {
  LogisticArousalSurrogate zero({}, 0.0);
  std::vector<ArousalFeatureRow> rows(3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].window_center = 10.0 + double(i);
    rows[i].ibi_mean = double(i) - 1.0;
  }
  for (const auto& s : estimate_arousal(rows, zero).samples) CHECK(s.value == 0.5);

  std::array<double, kArousalFeatureCount> w{};
  w[0] = 2.0;
  LogisticArousalSurrogate six(w, 0.0);
  ArousalFeatureRow r;
  r.ibi_mean = 3.0;
  CHECK(six.predict(r) == doctest::Approx(0.9975).epsilon(1e-4));
  CHECK(estimate_arousal(std::vector<ArousalFeatureRow>{}, six).empty());

  r.hr_mean = std::nan("");
  CHECK_THROWS_AS(estimate_arousal(std::vector<ArousalFeatureRow>{r}, six), ValidationError);

  // Row order does not matter.
  auto a = estimate_arousal(rows, default_arousal_surrogate());
  std::vector<ArousalFeatureRow> rev(rows.rbegin(), rows.rend());
  auto b = estimate_arousal(rev, default_arousal_surrogate());
  CHECK(a.samples == b.samples);

  const auto j = default_arousal_surrogate().to_json();
  CHECK(j.at("weights").size() == kArousalFeatureCount);
  CHECK(j.at("feature_order").size() == kArousalFeatureCount);
  const auto back = LogisticArousalSurrogate::from_json(j);
  CHECK(back.weights() == default_arousal_surrogate().weights());
}

TEST_CASE("acceleration magnitude") {
  auto one = [](double v) { return SampleSeries{Modality::accel_x_g, {{0.0, v}}}; };
  CHECK(accel_magnitude(one(0), one(0), one(1)).samples[0].value == 1.0);
  CHECK(accel_magnitude(one(3), one(4), one(0)).samples[0].value == 5.0);
  CHECK(accel_magnitude(one(1), one(1), one(1)).samples[0].value == doctest::Approx(1.7320508).epsilon(1e-8));

  // Unmatched timestamps are dropped and counted.
  SampleSeries x{Modality::accel_x_g, {{0, 1}, {1, 1}}}, y{Modality::accel_y_g, {{0, 0}, {2, 0}}},
      z{Modality::accel_z_g, {{0, 0}, {1, 0}}};
  std::size_t unmatched = 0;
  CHECK(accel_magnitude(x, y, z, &unmatched).size() == 1);
  CHECK(unmatched > 0);

  // Rotation invariance.
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = rng.uniform(0, 6.3), b = rng.uniform(0, 6.3);
    const double vx = rng.normal(), vy = rng.normal(), vz = rng.normal();
    // Rotate about z by a, then about x by b.
    const double x1 = std::cos(a) * vx - std::sin(a) * vy, y1 = std::sin(a) * vx + std::cos(a) * vy;
    const double y2 = std::cos(b) * y1 - std::sin(b) * vz, z2 = std::sin(b) * y1 + std::cos(b) * vz;
    const double m0 = accel_magnitude(one(vx), one(vy), one(vz)).samples[0].value;
    const double m1 = accel_magnitude(one(x1), one(y2), one(z2)).samples[0].value;
    CHECK(std::abs(m0 - m1) < 1e-9);
  }
}

}
