#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "impairdetect/synth.hpp"
#include "support.hpp"

using namespace impairdetect;
namespace fs = std::filesystem;

namespace {

double phase_ibi_mean(const ParticipantRecord& r, int phase) {
  const auto& ph = r.phase(phase);
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& b : r.ibi.samples) {
    if (ph.contains(b.t)) {
      s += b.value;
      ++n;
    }
  }
  return s / static_cast<double>(n);
}

// Mean over treatment participants of the phase-2 minus phase-1 IBI mean.
double planted_shift(const Cohort& c) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : c.participants) {
    if (r.participant.group != Group::treatment) continue;
    s += phase_ibi_mean(r, 2) - phase_ibi_mean(r, 1);
    ++n;
  }
  return s / n;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("group sizes and BAC ranges") {
  auto cfg = SynthConfig::desk_default();
  cfg.seed = 3;
  const auto c = generate_cohort(cfg);
  CHECK(c.count(Group::treatment) == 12);
  CHECK(c.count(Group::placebo) == 5);
  CHECK(c.count(Group::reference) == 5);
  for (const auto& r : c.participants) {
    REQUIRE(r.phases.size() == 3);
    for (const auto& ph : r.phases) CHECK(ph.duration() == doctest::Approx(600.0));
    for (const auto& m : r.bac) {
      const auto* ph = r.phase_containing(m.t, m.t);
      if (r.participant.group != Group::treatment || ph == nullptr || ph->index == 1) {
        if (ph != nullptr && ph->index == 1) CHECK(m.bac_g_per_dl == 0.0);
        if (r.participant.group != Group::treatment) CHECK(m.bac_g_per_dl == 0.0);
        continue;
      }
      if (ph->index == 2) {
        CHECK(m.bac_g_per_dl >= cfg.severe_bac_min - 1e-12);
        CHECK(m.bac_g_per_dl <= cfg.severe_bac_max + 1e-12);
      } else {
        CHECK(m.bac_g_per_dl >= cfg.moderate_bac_min - 1e-12);
        CHECK(m.bac_g_per_dl <= cfg.moderate_bac_max + 1e-12);
      }
    }
  }
  CHECK_NOTHROW(validate_cohort(c));
}

TEST_CASE("written cohorts are byte-identical for a seed") {
  auto cfg = testing::tiny_cohort(5);
  testing::TempDir a("synth_a"), b("synth_b");
  generate_cohort(cfg, a.path());
  generate_cohort(cfg, b.path());
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path());
    CHECK(slurp(e.path()) == slurp(b.path() / rel));
    ++files;
  }
  CHECK(files > 5);
  const auto back = ingest_cohort(a / "manifest.json");
  CHECK(back.ids() == generate_cohort(cfg).ids());
  cfg.seed = 6;
  CHECK(generate_cohort(cfg).participants[0].ibi.samples != back.participants[0].ibi.samples);
}

TEST_CASE("planted effect lowers the alcohol-phase IBI") {
  auto cfg = SynthConfig::desk_default();
  cfg.seed = 1;
  const auto c = generate_cohort(cfg);
  for (const auto& r : c.participants) {
    if (r.participant.group == Group::treatment) CHECK(phase_ibi_mean(r, 2) < phase_ibi_mean(r, 1));
  }
  CHECK(planted_shift(c) < -50.0);
}

TEST_CASE("heart rate follows the beat intervals") {
  const auto c = generate_cohort(testing::tiny_cohort(2));
  for (const auto& r : c.participants) {
    double err = 0.0;
    std::size_t n = 0, k = 0;
    for (const auto& h : r.hr.samples) {
      while (k < r.ibi.size() && r.ibi.samples[k].t < h.t) ++k;
      if (k >= r.ibi.size()) break;
      if (k == 0 || r.ibi.samples[k].t - r.ibi.samples[k - 1].t > 3.0) continue;  // gap between drives
      err += std::abs(h.value - 60000.0 / r.ibi.samples[k].value);
      ++n;
    }
    REQUIRE(n > 100);
    CHECK(err / static_cast<double>(n) < 5.0);
  }
}

TEST_CASE("null effect leaves phase means unchanged") {
  auto cfg = SynthConfig::desk_default();
  cfg.seed = 9;
  cfg.effect = SynthEffect::none();
  CHECK(std::abs(planted_shift(generate_cohort(cfg))) < 15.0);
}

TEST_CASE("effect size grows with the scale") {
  auto cfg = SynthConfig::desk_default();
  cfg.n_placebo = 0;
  cfg.n_reference = 0;
  cfg.seed = 4;
  const auto base = cfg.effect;
  double last = 1e9;
  for (double k : {0.0, 0.5, 1.0, 2.0}) {
    cfg.effect = base.scaled(k);
    const double s = planted_shift(generate_cohort(cfg));
    CHECK(s < last);
    last = s;
  }
  CHECK(base.scaled(0.0).to_json() == SynthEffect::none().to_json());
}

TEST_CASE("config validation and json") {
  auto cfg = SynthConfig::desk_default();
  CHECK(SynthConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  cfg.severe_bac_min = 0.09;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  auto j = SynthConfig::desk_default().to_json();
  j["no_such_key"] = 1;
  CHECK_THROWS_AS(SynthConfig::from_json(j), ValidationError);
  auto e = SynthEffect{}.to_json();
  e["profile"] = "sometimes";
  CHECK_THROWS_AS(SynthEffect::from_json(e), ValidationError);
  e["profile"] = "phase_level";
  CHECK(SynthEffect::from_json(e).profile == EffectProfile::phase_level);
}

}
