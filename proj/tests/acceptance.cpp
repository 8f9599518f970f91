// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// the number of failures. Pass criterion numbers (1..12) to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "impairdetect/pipeline.hpp"
#include "impairdetect/rng.hpp"
#include "support.hpp"

using namespace impairdetect;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

constexpr std::uint64_t kSeed = 7;
constexpr int kCnnEpochs = 3;

// Shared desk-scale pipeline pieces ----------------------------------------------------

struct Prepared {
  PreparedCohort prep;
  FeatureTable table;  // feature windows, both modalities
};

Prepared prepare_lr(const SynthConfig& cfg, NormScope scope) {
  PreprocessConfig pc;
  pc.scope = scope;
  Prepared p{preprocess_cohort(generate_cohort(cfg), pc, default_arousal_surrogate()), {}};
  const auto windows = make_windows(p.prep, WindowSpec::feature_default());
  const std::vector<FeatureModality> mods{FeatureModality::arousal, FeatureModality::accel};
  p.table = build_feature_table(windows, FeatureCatalog::default_catalog(), mods);
  return p;
}

const std::vector<FeatureModality> kArousal{FeatureModality::arousal};
const std::vector<FeatureModality> kAccel{FeatureModality::accel};
const std::vector<FeatureModality> kBoth{FeatureModality::arousal, FeatureModality::accel};

// Every LR run is kept for the KKT criterion.
// The table is copied because the Prepared that owns it is gone by then.
struct LrRecord {
  FeatureTable table;
  LrConfig config;
  LrRun run;
};
std::vector<LrRecord> lr_runs;

double run_lr(const Prepared& p, const std::vector<FeatureModality>& mods) {
  LrConfig lc;
  lc.modalities = mods;
  lc.seed = kSeed;
  auto run = run_lr_loso(p.table, p.prep.phase_starts(), lc);
  const double a = run.report.pooled_treatment.auroc;
  lr_runs.push_back({p.table, lc, std::move(run)});
  return a;
}

SynthConfig desk(double scale) {
  auto c = SynthConfig::desk_default();
  c.seed = kSeed;
  c.effect = c.effect.scaled(scale);
  return c;
}

struct CnnOutcome {
  CnnRun run;
  double seconds = 0.0;
};

CnnOutcome run_cnn(const SynthConfig& cfg, Task task, GroupScope groups = GroupScope::all) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto prep = preprocess_cohort(generate_cohort(cfg), PreprocessConfig{}, default_arousal_surrogate());
  const auto windows = filter_windows(make_windows(prep, WindowSpec::cnn_default()), groups);
  const auto data = nn::make_cnn_data(windows, task);
  nn::TrainConfig tc;
  tc.task = task;
  tc.seed = kSeed;
  tc.max_epochs = kCnnEpochs;
  CnnOutcome out{run_cnn_loso(data, prep.phase_starts(), tc), 0.0};
  out.seconds = seconds_since(t0);
  return out;
}

// 1 ------------------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = testing::run_gradient_checks(120, 20240);
  const double s = seconds_since(t0);
  return {r.cases >= 100 && r.worst < 1e-4 && s < 60.0,
          fmt("%d shapes, worst relative error %.2e (%s), %.1f s", r.cases, r.worst, r.worst_case.c_str(), s)};
}

// 2 ------------------------------------------------------------------------------------

Outcome auroc_oracle() {
  Rng rng(99);
  int mismatches = 0, tie_heavy = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 2 + rng.index(49);
    // half the instances draw from three score levels only
    const bool ties = rep % 2 == 0;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = ties ? static_cast<double>(rng.index(3)) : rng.uniform();
      y[i] = static_cast<int>(rng.index(2));
    }
    // both classes must occur
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos == 0 || pos == static_cast<long>(n)) y[0] = 1 - y[0];
    tie_heavy += ties;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (y[i] == 1 && y[j] == 0) {
          num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
          den += 1.0;
        }
      }
    }
    if (auroc(s, y) != num / den) ++mismatches;
  }
  return {mismatches == 0, fmt("1000 instances (%d tie-heavy), %d mismatches", tie_heavy, mismatches)};
}

// 3 ------------------------------------------------------------------------------------

Outcome prevalence_baseline() {
  Rng rng(5);
  bool ok = true;
  std::string detail;
  for (double p : {1.0 / 3.0, 0.19, 0.38}) {
    const std::size_t n = 5000, pos = static_cast<std::size_t>(std::lround(p * n));
    std::vector<int> y(n, 0);
    std::fill(y.begin(), y.begin() + static_cast<long>(pos), 1);
    rng.shuffle(y);
    std::vector<double> s(n);
    for (auto& v : s) v = rng.uniform();
    const double ap = auprc(s, y);
    ok = ok && std::abs(ap - p) <= 0.02;
    detail += fmt("p=%.3f auprc=%.4f; ", p, ap);
  }
  return {ok, detail};
}

// 4 ------------------------------------------------------------------------------------

// Independent KKT check of a fitted fold: gradient of the mean class-weighted
// logistic loss against the subgradient of lambda |w|_1.
double kkt_violation(const LassoLogitModel& m, const std::vector<std::vector<double>>& x, const std::vector<int>& y) {
  const double n = static_cast<double>(y.size());
  std::vector<double> g(m.weights.size(), 0.0);
  double gb = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double z = m.bias;
    for (std::size_t j = 0; j < g.size(); ++j) z += m.weights[j] * x[i][j];
    const double pr = 1.0 / (1.0 + std::exp(-z));
    const double r = m.class_weights[static_cast<std::size_t>(y[i])] / n * (pr - y[i]);
    gb += r;
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += r * x[i][j];
  }
  double v = std::abs(gb);
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double w = m.weights[j];
    v = std::max(v, w == 0.0 ? std::abs(g[j]) - m.lambda : std::abs(g[j] + m.lambda * (w > 0 ? 1.0 : -1.0)));
  }
  return v;
}

Outcome lasso_kkt() {
  if (lr_runs.empty()) return {false, "no LR runs recorded (run criterion 6, 7 or 8 first)"};
  std::size_t folds = 0, bad_kkt = 0, bad_mono = 0;
  double worst = 0.0;
  for (const auto& rec : lr_runs) {
    const auto& t = rec.table;
    for (std::size_t f = 0; f < rec.run.models.size(); ++f) {
      std::vector<std::size_t> train;
      for (std::size_t r = 0; r < t.size(); ++r) {
        if (t.windows[r].participant_id != rec.run.fold_ids[f]) train.push_back(r);
      }
      const auto xm = apply_design(rec.run.designs[f], t, train);
      std::vector<int> y;
      for (auto r : xm.rows) y.push_back(static_cast<int>(t.windows[r].labels.value(rec.config.task)));
      const auto& m = rec.run.models[f];
      const double v = kkt_violation(m, xm.x, y);
      worst = std::max(worst, v);
      bad_kkt += !(v <= 1e-6);
      for (std::size_t i = 1; i < m.objective_history.size(); ++i) {
        if (m.objective_history[i] > m.objective_history[i - 1]) {
          ++bad_mono;
          break;
        }
      }
      ++folds;
    }
  }
  return {bad_kkt == 0 && bad_mono == 0,
          fmt("%zu folds over %zu runs, worst violation %.2e, %zu above 1e-6, %zu with an objective increase", folds,
              lr_runs.size(), worst, bad_kkt, bad_mono)};
}

// 5 ------------------------------------------------------------------------------------

Outcome architecture() {
  nn::CnnArch arch;
  nn::TwoTowerCnn<float> net(arch, 1);
  nn::Tensor<float> a({1, 1, 180}), c({1, 1, 4500});
  net.forward(a, c, false);
  using Trace = std::vector<std::pair<std::size_t, std::size_t>>;
  const Trace at{{16, 90}, {32, 45}, {64, 23}};
  const Trace ct{{32, 2250}, {64, 1125}, {128, 563}, {128, 282}};
  const bool ok = net.arousal_tower()->trace() == at && net.accel_tower()->trace() == ct;
  std::string d = "arousal 180";
  for (auto [ch, len] : net.arousal_tower()->trace()) d += fmt(" -> %zux%zu", ch, len);
  d += "; accel 4500";
  for (auto [ch, len] : net.accel_tower()->trace()) d += fmt(" -> %zux%zu", ch, len);
  return {ok, d};
}

// 6 ------------------------------------------------------------------------------------

Outcome end_to_end() {
  const auto large = prepare_lr(desk(1.0), NormScope::participant);
  const double lr_large = run_lr(large, kBoth);
  const auto zero = prepare_lr(desk(0.0), NormScope::participant);
  const double lr_zero = run_lr(zero, kBoth);
  std::printf("  lr: large %.3f, zero %.3f\n", lr_large, lr_zero);
  const auto cl = run_cnn(desk(1.0), Task::early_warning);
  std::printf("  cnn large: %.3f in %.0f s\n", cl.run.report.pooled_treatment.auroc, cl.seconds);
  const auto cz = run_cnn(desk(0.0), Task::early_warning);
  const double cnn_large = cl.run.report.pooled_treatment.auroc, cnn_zero = cz.run.report.pooled_treatment.auroc;
  auto null_ok = [](double a) { return a >= 0.45 && a <= 0.55; };
  const bool ok = lr_large >= 0.90 && cnn_large >= 0.90 && null_ok(lr_zero) && null_ok(cnn_zero) && cl.seconds < 1800 &&
                  cz.seconds < 1800;
  return {ok, fmt("pooled treatment AUROC: LR large %.3f zero %.3f; CNN large %.3f zero %.3f; CNN runs %.0f s / %.0f s "
                  "(%d epochs)",
                  lr_large, lr_zero, cnn_large, cnn_zero, cl.seconds, cz.seconds, kCnnEpochs)};
}

// 7 ------------------------------------------------------------------------------------

Outcome ablation() {
  auto cfg = desk(1.0);
  cfg.effect.arousal_shift = 0.0;
  cfg.effect.hrv_reduction = 0.0;
  const auto p = prepare_lr(cfg, NormScope::participant);
  const double ar = run_lr(p, kArousal), ac = run_lr(p, kAccel), both = run_lr(p, kBoth);
  return {ac >= ar + 0.15 && both >= std::max(ar, ac) - 0.02,
          fmt("accel-only effect, pooled treatment AUROC: arousal %.3f, accel %.3f, combined %.3f", ar, ac, both)};
}

// 8 ------------------------------------------------------------------------------------

Outcome normalization_control() {
  auto mean_only = desk(1.0);
  mean_only.effect.hrv_reduction = 0.0;
  mean_only.effect.accel_roughness = 1.0;
  mean_only.effect.profile = EffectProfile::phase_level;
  const auto pm = prepare_lr(mean_only, NormScope::participant_phase);
  const double a_mean = run_lr(pm, kBoth);
  const auto raw = prepare_lr(mean_only, NormScope::participant);
  const double a_raw = run_lr(raw, kBoth);
  auto dynamics = desk(1.0);
  dynamics.effect.arousal_shift = 0.0;
  const auto pd = prepare_lr(dynamics, NormScope::participant_phase);
  const double a_dyn = run_lr(pd, kBoth);
  return {std::abs(a_mean - 0.5) <= 0.05 && a_dyn >= 0.85,
          fmt("per-phase normalization: mean-shift effect %.3f (without it %.3f), dynamics-only effect %.3f", a_mean,
              a_raw, a_dyn)};
}

// 9 ------------------------------------------------------------------------------------

// Separate models per group, each with its own LOSO over that group only.
Outcome phase_classification() {
  auto mean_auroc = [](const CnnRun& run) {
    double s = 0.0;
    for (const auto& pm : run.report.participants) s += pm.auroc;
    return run.report.participants.empty() ? std::nan("") : s / static_cast<double>(run.report.participants.size());
  };
  const auto treat = run_cnn(desk(1.0), Task::phase_categorical, GroupScope::treatment);
  // ten desk controls give a mean whose seed-to-seed spread is about as wide as
  // the accepted band, so the control model gets the full 23-participant arm
  auto controls = desk(1.0);
  controls.n_placebo = 12;
  controls.n_reference = 11;
  const auto ctrl = run_cnn(controls, Task::phase_categorical, GroupScope::control);
  const double t = mean_auroc(treat.run), c = mean_auroc(ctrl.run);
  return {c >= 0.45 && c <= 0.60 && t >= 0.85,
          fmt("3-class macro AUROC: controls %.3f (n=%zu), treatment %.3f (n=%zu), %.0f s + %.0f s", c,
              ctrl.run.report.participants.size(), t, treat.run.report.participants.size(), ctrl.seconds,
              treat.seconds)};
}

// 10 -----------------------------------------------------------------------------------

Outcome delong() {
  const std::vector<double> ps{0.1, 0.2, 0.3, 0.6, 0.7, 0.9};
  const std::vector<int> py{0, 0, 0, 1, 1, 1};
  const auto perfect = delong_ci(ps, py);
  Rng rng(404);
  std::vector<double> s(200);
  std::vector<int> y(200);
  for (int i = 0; i < 200; ++i) {
    y[i] = i < 100 ? 1 : 0;
    s[i] = rng.normal() + (y[i] ? 1.0 : 0.0);
  }
  const auto d = delong_ci(s, y);
  // stratified bootstrap keeps both class sizes fixed, as the DeLong variance does
  std::vector<double> boots;
  std::vector<double> bs(200);
  for (int b = 0; b < 2000; ++b) {
    for (int i = 0; i < 100; ++i) bs[i] = s[rng.index(100)];
    for (int i = 100; i < 200; ++i) bs[i] = s[100 + rng.index(100)];
    boots.push_back(auroc(bs, y));
  }
  double m = 0.0, v = 0.0;
  for (double a : boots) m += a / 2000.0;
  for (double a : boots) v += (a - m) * (a - m) / 1999.0;
  const double ratio = d.variance / v;
  return {perfect.low == 1.0 && perfect.high == 1.0 && std::abs(ratio - 1.0) <= 0.2,
          fmt("perfect separation CI [%g, %g]; DeLong variance %.3e vs bootstrap %.3e (ratio %.3f)", perfect.low,
              perfect.high, d.variance, v, ratio)};
}

// 11 -----------------------------------------------------------------------------------

SampleSeries regular(Modality m, double start, double end, double rate) {
  SampleSeries s{m, {}};
  const auto n = static_cast<long long>(std::floor((end - start) * rate));
  for (long long k = 0; k <= n; ++k) s.samples.push_back({start + static_cast<double>(k) / rate, 0.5});
  return s;
}

Outcome window_arithmetic() {
  Rng rng(11);
  int bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const double len = std::round(rng.uniform(20, 300));
    const double step = std::max(1.0, std::round(rng.uniform(0.05, 1.0) * len * 4) / 4);
    const double dur = std::round(rng.uniform(0.3, 5.0) * len);
    const double p0 = 50.0 + 7.0 * trial;
    std::vector<DrivingPhase> phases{{1, p0, p0 + dur, {}}};
    const auto ar = regular(Modality::arousal_prob, p0 - 2, p0 + dur + 2, 1.0);
    const auto acc = regular(Modality::accel_mag_g, p0 - 2, p0 + dur + 2, 25.0);
    const auto ws = segment({"X", Group::treatment, &ar, &acc, &phases}, WindowSpec{len, step, 0.5, Pipeline::feature});
    const long expected = dur < len ? 0 : static_cast<long>(std::floor((dur - len) / step)) + 1;
    bad += static_cast<long>(ws.size()) != expected;
  }
  std::vector<double> steps;
  for (double l : kSweepLengths) steps.push_back(WindowSpec::quarter_step(l).step_s);
  const std::vector<double> want{7.5, 15, 30, 45, 75, 112.5, 150};
  std::string d = fmt("%d/50 combinations off the closed form; steps", bad);
  for (double s : steps) d += fmt(" %g", s);
  return {bad == 0 && steps == want, d};
}

// 12 -----------------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  auto cfg = SynthConfig::desk_default();
  cfg.seed = 1234;
  testing::TempDir a("acc_a"), b("acc_b");
  const auto ca = generate_cohort(cfg, a.path());
  generate_cohort(cfg, b.path());
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    ++files;
    differ += slurp(e.path()) != slurp(b.path() / fs::relative(e.path(), a.path()));
  }
  const bool plan_ok = make_loso_plan(ca, 1234).to_json() == make_loso_plan(ingest_cohort(b / "manifest.json"), 1234).to_json();

  // two trainings on the same windows
  const auto prep = preprocess_cohort(generate_cohort(testing::tiny_cohort(3)), PreprocessConfig{},
                                      default_arousal_surrogate());
  const auto data = nn::make_cnn_data(make_windows(prep, WindowSpec::cnn_default()), Task::early_warning);
  std::vector<std::size_t> train, val;
  for (std::size_t i = 0; i < data.size(); ++i) (i % 4 == 0 ? val : train).push_back(i);
  nn::TrainConfig tc;
  tc.max_epochs = 2;
  tc.seed = 1234;
  const auto m1 = nn::train_cnn(data, train, val, tc);
  const auto m2 = nn::train_cnn(data, train, val, tc);
  const bool hist_ok = m1.history.to_json().dump() == m2.history.to_json().dump() && m1.state == m2.state;
  return {differ == 0 && files > 0 && plan_ok && hist_ok,
          fmt("%zu cohort files, %zu differ; LOSO plan %s; training history %s", files, differ,
              plan_ok ? "identical" : "differs", hist_ok ? "bit-identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IONBF, 0);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient_checks", gradients},
      {"auroc_oracle", auroc_oracle},
      {"prevalence_baseline", prevalence_baseline},
      {"lasso_kkt", lasso_kkt},
      {"architecture", architecture},
      {"end_to_end_planted_effect", end_to_end},
      {"ablation_direction", ablation},
      {"per_phase_normalization", normalization_control},
      {"phase_classification", phase_classification},
      {"delong", delong},
      {"window_arithmetic", window_arithmetic},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  // the KKT check inspects the LR runs of later criteria, so it runs last
  std::vector<int> order;
  for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) {
    if (i != 4) order.push_back(i);
  }
  order.push_back(4);
  int failures = 0;
  std::vector<std::string> lines(criteria.size());
  for (int i : order) {
    if (!selected.empty() && !selected.count(i)) continue;
    const auto& [name, fn] = criteria[static_cast<std::size_t>(i - 1)];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    lines[static_cast<std::size_t>(i - 1)] =
        fmt("%s %2d %s: ", o.pass ? "PASS" : "FAIL", i, name) + o.detail + fmt(" [%.1f s]", seconds_since(t0));
    std::printf("%s\n", lines[static_cast<std::size_t>(i - 1)].c_str());
    failures += !o.pass;
  }
  std::printf("\nsummary\n");
  for (const auto& l : lines) {
    if (!l.empty()) std::printf("%s\n", l.c_str());
  }
  return failures;
}
