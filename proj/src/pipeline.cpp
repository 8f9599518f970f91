#include "impairdetect/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "impairdetect/labels.hpp"
#include "impairdetect/rng.hpp"

namespace impairdetect {

namespace fs = std::filesystem;

namespace {

/// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception
/// is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

io::Json norm_stats_json(const std::vector<NormStats>& stats) {
  io::Json a = io::Json::array();
  for (const auto& s : stats) {
    a.push_back({{"phase", s.phase_index}, {"mean", s.mean}, {"std", s.std}, {"zero_variance", s.zero_variance}});
  }
  return a;
}

io::Json phases_json(const std::vector<DrivingPhase>& phases) {
  io::Json a = io::Json::array();
  for (const auto& p : phases) a.push_back({{"index", p.index}, {"start_s", p.start_s}, {"end_s", p.end_s}});
  return a;
}

std::vector<DrivingPhase> phases_from(const io::Json& j) {
  std::vector<DrivingPhase> out;
  for (const auto& p : j) {
    DrivingPhase ph;
    ph.index = p.at("index").get<int>();
    ph.start_s = p.at("start_s").get<double>();
    ph.end_s = p.at("end_s").get<double>();
    out.push_back(ph);
  }
  return out;
}

std::string scope_name(NormScope s) { return s == NormScope::participant ? "participant" : "participant_phase"; }

NormScope parse_scope(const std::string& s) {
  if (s == "participant") return NormScope::participant;
  if (s == "participant_phase" || s == "phase") return NormScope::participant_phase;
  throw ValidationError("unknown normalization scope: " + s);
}

void put_f64(std::string& out, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

double get_f64(const unsigned char* p) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

io::Json spec_json(const WindowSpec& s) {
  return {{"length_s", s.length_s},
          {"step_s", s.step_s},
          {"min_coverage", s.min_coverage},
          {"pipeline", s.pipeline == Pipeline::feature ? "feature" : "cnn"}};
}

WindowSpec spec_from(const io::Json& j) {
  WindowSpec s;
  s.length_s = j.at("length_s").get<double>();
  s.step_s = j.at("step_s").get<double>();
  s.min_coverage = j.at("min_coverage").get<double>();
  s.pipeline = j.at("pipeline").get<std::string>() == "cnn" ? Pipeline::cnn : Pipeline::feature;
  s.validate();
  return s;
}

WindowPrediction prediction_for(const WindowRef& w, const PhaseStarts& starts, Task task) {
  WindowPrediction p;
  p.participant_id = w.participant_id;
  p.group = w.group;
  p.phase_index = w.phase_index;
  p.start_s = w.start_s;
  const auto it = starts.find({w.participant_id, w.phase_index});
  if (it == starts.end()) {
    throw ValidationError("no phase start for " + w.participant_id + " phase " + std::to_string(w.phase_index));
  }
  p.elapsed_s = w.end_s() - it->second;
  p.label = w.labels.value(task);
  return p;
}

std::vector<std::string> participants_in(std::span<const WindowRef> refs) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& r : refs) {
    if (seen.insert(r.participant_id).second) ids.push_back(r.participant_id);
  }
  return ids;
}

}  // namespace

// Preprocessing --------------------------------------------------------------

io::Json PreprocessConfig::to_json() const {
  return {{"outliers",
           {{"ibi_min_ms", outliers.ibi_min_ms},
            {"ibi_max_ms", outliers.ibi_max_ms},
            {"ibi_max_relative_diff", outliers.ibi_max_relative_diff},
            {"hr_min_bpm", outliers.hr_min_bpm},
            {"hr_max_bpm", outliers.hr_max_bpm}}},
          {"normalization", scope_name(scope)},
          {"arousal_window_s", arousal_window_s},
          {"arousal_step_s", arousal_step_s}};
}

PreprocessConfig PreprocessConfig::from_json(const io::Json& j) {
  PreprocessConfig c;
  try {
    if (j.contains("outliers")) {
      const auto& o = j.at("outliers");
      c.outliers.ibi_min_ms = o.value("ibi_min_ms", c.outliers.ibi_min_ms);
      c.outliers.ibi_max_ms = o.value("ibi_max_ms", c.outliers.ibi_max_ms);
      c.outliers.ibi_max_relative_diff = o.value("ibi_max_relative_diff", c.outliers.ibi_max_relative_diff);
      c.outliers.hr_min_bpm = o.value("hr_min_bpm", c.outliers.hr_min_bpm);
      c.outliers.hr_max_bpm = o.value("hr_max_bpm", c.outliers.hr_max_bpm);
    }
    if (j.contains("normalization")) c.scope = parse_scope(j.at("normalization").get<std::string>());
    c.arousal_window_s = j.value("arousal_window_s", c.arousal_window_s);
    c.arousal_step_s = j.value("arousal_step_s", c.arousal_step_s);
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("preprocess config: ") + e.what());
  }
  if (!(c.arousal_window_s > 0 && c.arousal_step_s > 0)) {
    throw ValidationError("preprocess config: arousal window and step must be positive");
  }
  return c;
}

std::vector<std::string> PreparedCohort::ids() const {
  std::vector<std::string> out;
  for (const auto& p : participants) out.push_back(p.record.participant.id);
  return out;
}

PhaseStarts PreparedCohort::phase_starts() const {
  PhaseStarts m;
  for (const auto& p : participants) {
    for (const auto& ph : p.record.phases) m[{p.record.participant.id, ph.index}] = ph.start_s;
  }
  return m;
}

PreparedCohort preprocess_cohort(const Cohort& cohort, const PreprocessConfig& config,
                                 const ArousalEstimator& estimator, unsigned threads) {
  PreparedCohort out;
  out.config = config;
  out.estimator = estimator.name() + "@" + estimator.version();
  out.participants.resize(cohort.participants.size());
  parallel_for(cohort.participants.size(), threads, [&](std::size_t i) {
    const auto& rec = cohort.participants[i];
    PreparedParticipant& pp = out.participants[i];
    pp.record.participant = rec.participant;
    pp.record.phases = rec.phases;
    pp.record.bac = rec.bac;
    const auto& id = rec.participant.id;
    if (rec.ibi.empty() || rec.hr.empty()) throw ValidationError("preprocess: " + id + " has no IBI or HR samples");

    const SampleSeries ibi = remove_outliers(rec.ibi, config.outliers);
    const SampleSeries hr = remove_outliers(rec.hr, config.outliers);
    const auto nibi = zscore_normalize(ibi, config.scope, rec.phases);
    const auto nhr = zscore_normalize(hr, config.scope, rec.phases);
    const auto rows = compute_arousal_features(nibi.series, nhr.series, config.arousal_window_s, config.arousal_step_s);
    pp.arousal = estimate_arousal(rows, estimator);

    std::size_t unmatched = 0;
    pp.accel = accel_magnitude(rec.accel_x, rec.accel_y, rec.accel_z, &unmatched);
    io::Json model_inputs = io::Json::object();
    if (config.scope == NormScope::participant_phase) {
      auto na = zscore_normalize(pp.arousal, NormScope::participant_phase, rec.phases);
      auto nc = zscore_normalize(pp.accel, NormScope::participant_phase, rec.phases);
      pp.arousal = std::move(na.series);
      pp.accel = std::move(nc.series);
      model_inputs = {{"arousal", norm_stats_json(na.stats)}, {"accel", norm_stats_json(nc.stats)}};
    }
    pp.stats = {{"ibi_removed", rec.ibi.size() - ibi.size()},
                {"hr_removed", rec.hr.size() - hr.size()},
                {"accel_unmatched", unmatched},
                {"arousal_rows", rows.size()},
                {"ibi_norm", norm_stats_json(nibi.stats)},
                {"hr_norm", norm_stats_json(nhr.stats)},
                {"model_input_norm", model_inputs}};
  });
  return out;
}

void PreparedCohort::write(const fs::path& dir) const {
  fs::create_directories(dir);
  io::Json m;
  m["config"] = config.to_json();
  m["estimator"] = estimator;
  m["participants"] = io::Json::array();
  for (const auto& p : participants) {
    const auto& id = p.record.participant.id;
    io::Json bac = io::Json::array();
    for (const auto& b : p.record.bac) bac.push_back({{"t_s", b.t}, {"bac_g_per_dl", b.bac_g_per_dl}});
    m["participants"].push_back({{"id", id},
                                 {"group", std::string(to_string(p.record.participant.group))},
                                 {"phases", phases_json(p.record.phases)},
                                 {"bac", bac},
                                 {"files", {{"arousal", id + "_arousal.csv"}, {"accel_mag", id + "_accel_mag.csv"}}},
                                 {"stats", p.stats}});
    write_signal_csv(dir / (id + "_arousal.csv"), p.arousal);
    write_signal_csv(dir / (id + "_accel_mag.csv"), p.accel);
  }
  io::write_json(dir / "prepared.json", m);
}

PreparedCohort PreparedCohort::read(const fs::path& dir) {
  const io::Json m = io::read_json(dir / "prepared.json");
  PreparedCohort c;
  try {
    c.config = PreprocessConfig::from_json(m.at("config"));
    c.estimator = m.at("estimator").get<std::string>();
    for (const auto& pj : m.at("participants")) {
      PreparedParticipant p;
      p.record.participant.id = pj.at("id").get<std::string>();
      p.record.participant.group = parse_group(pj.at("group").get<std::string>());
      p.record.phases = phases_from(pj.at("phases"));
      for (const auto& b : pj.at("bac")) {
        p.record.bac.push_back({p.record.participant.id, b.at("t_s").get<double>(), std::nullopt,
                                b.at("bac_g_per_dl").get<double>()});
      }
      p.arousal = read_signal_csv(dir / pj.at("files").at("arousal").get<std::string>(), Modality::arousal_prob);
      p.accel = read_signal_csv(dir / pj.at("files").at("accel_mag").get<std::string>(), Modality::accel_mag_g);
      p.stats = pj.value("stats", io::Json::object());
      c.participants.push_back(std::move(p));
    }
  } catch (const io::Json::exception& e) {
    throw ValidationError("prepared.json: " + std::string(e.what()));
  }
  return c;
}

// Windows ----------------------------------------------------------------------

std::vector<WindowSegment> make_windows(const PreparedCohort& cohort, const WindowSpec& spec, SegmentStats* stats) {
  std::vector<WindowSegment> all;
  SegmentStats total;
  for (const auto& p : cohort.participants) {
    SegmentInput in;
    in.participant_id = p.record.participant.id;
    in.group = p.record.participant.group;
    in.arousal = &p.arousal;
    in.accel = &p.accel;
    in.phases = &p.record.phases;
    SegmentStats s;
    auto ws = segment(in, spec, &s);
    assign_labels(ws, p.record);
    total.candidates += s.candidates;
    total.dropped_coverage += s.dropped_coverage;
    all.insert(all.end(), std::make_move_iterator(ws.begin()), std::make_move_iterator(ws.end()));
  }
  if (stats) *stats = total;
  return all;
}

void write_windows(std::span<const WindowSegment> windows, const fs::path& dir) {
  fs::create_directories(dir);
  io::CsvWriter w(dir / "windows.csv");
  w.row({"participant", "group", "phase", "start_s", "length_s", "arousal_coverage", "accel_coverage", "label_early",
         "label_above", "label_phase", "label_bac"});
  std::string bytes;
  for (const auto& s : windows) {
    w.row({s.participant_id, std::string(to_string(s.group)), std::to_string(s.phase_index),
           io::format_double(s.start_s), io::format_double(s.spec.length_s), io::format_double(s.arousal_coverage),
           io::format_double(s.accel_coverage), std::to_string(s.labels.early), std::to_string(s.labels.above),
           std::to_string(s.labels.phase), io::format_double(s.labels.bac)});
    for (double v : s.arousal_grid) put_f64(bytes, v);
    for (double v : s.accel_grid) put_f64(bytes, v);
  }
  w.close();
  io::write_text(dir / "grids.bin", bytes);
  io::write_json(dir / "spec.json", windows.empty() ? io::Json::object() : spec_json(windows.front().spec));
}

std::vector<WindowSegment> read_windows(const fs::path& dir) {
  const io::Json sj = io::read_json(dir / "spec.json");
  const auto table = io::read_csv(dir / "windows.csv");
  if (table.rows.empty()) return {};
  const WindowSpec spec = spec_from(sj);
  const auto na = static_cast<std::size_t>(std::llround(spec.length_s * kArousalRateHz));
  const auto nc = static_cast<std::size_t>(std::llround(spec.length_s * kAccelRateHz));
  const std::string bytes = io::read_text(dir / "grids.bin");
  if (bytes.size() != table.rows.size() * (na + nc) * 8) throw ValidationError("grids.bin does not match windows.csv");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::vector<WindowSegment> out;
  const std::size_t c_part = table.column("participant"), c_group = table.column("group"),
                    c_phase = table.column("phase"), c_start = table.column("start_s"),
                    c_ac = table.column("arousal_coverage"), c_cc = table.column("accel_coverage"),
                    c_e = table.column("label_early"), c_a = table.column("label_above"),
                    c_p = table.column("label_phase"), c_b = table.column("label_bac");
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& f = table.rows[r];
    WindowSegment s;
    try {
      s.participant_id = f[c_part];
      s.group = parse_group(f[c_group]);
      s.phase_index = std::stoi(f[c_phase]);
      s.start_s = io::parse_double(f[c_start]);
      s.arousal_coverage = io::parse_double(f[c_ac]);
      s.accel_coverage = io::parse_double(f[c_cc]);
      s.labels = {std::stoi(f[c_e]), std::stoi(f[c_a]), std::stoi(f[c_p]), io::parse_double(f[c_b])};
    } catch (const std::exception& e) {
      throw IngestError(table.path, io::CsvTable::file_row(r), e.what());
    }
    s.spec = spec;
    s.arousal_grid.resize(na);
    s.accel_grid.resize(nc);
    for (auto& v : s.arousal_grid) v = get_f64(p), p += 8;
    for (auto& v : s.accel_grid) v = get_f64(p), p += 8;
    out.push_back(std::move(s));
  }
  return out;
}

GroupScope parse_group_scope(std::string_view s) {
  if (s == "all") return GroupScope::all;
  if (s == "treatment") return GroupScope::treatment;
  if (s == "control") return GroupScope::control;
  throw ValidationError("unknown group scope: " + std::string(s));
}

std::string_view to_string(GroupScope s) {
  switch (s) {
    case GroupScope::all: return "all";
    case GroupScope::treatment: return "treatment";
    case GroupScope::control: return "control";
  }
  return "all";
}

bool in_scope(Group g, GroupScope s) {
  return s == GroupScope::all || (s == GroupScope::treatment) == (g == Group::treatment);
}

std::vector<WindowSegment> filter_windows(std::span<const WindowSegment> windows, GroupScope scope) {
  std::vector<WindowSegment> out;
  for (const auto& w : windows) {
    if (in_scope(w.group, scope)) out.push_back(w);
  }
  return out;
}

// Logistic regression -------------------------------------------------------------

io::Json LrConfig::to_json() const {
  io::Json mods = io::Json::array();
  for (auto m : modalities) mods.push_back(std::string(to_string(m)));
  return {{"task", std::string(to_string(task))},
          {"modalities", mods},
          {"lasso",
           {{"lambda", std::isnan(lasso.lambda) ? io::Json(nullptr) : io::Json(lasso.lambda)},
            {"lambda_ratio", lasso.lambda_ratio},
            {"tol", lasso.tol},
            {"max_iter", lasso.max_iter},
            {"class_weights", lasso.class_weights}}},
          {"impute", impute == ImputeMode::median ? "median" : "drop"},
          {"max_missing", max_missing},
          {"seed", seed},
          {"ci_level", ci_level}};
}

LrConfig LrConfig::from_json(const io::Json& j) {
  LrConfig c;
  try {
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    if (j.contains("modalities")) {
      c.modalities.clear();
      for (const auto& m : j.at("modalities")) c.modalities.push_back(parse_feature_modality(m.get<std::string>()));
    }
    if (j.contains("lasso")) {
      const auto& l = j.at("lasso");
      if (l.contains("lambda") && !l.at("lambda").is_null()) c.lasso.lambda = l.at("lambda").get<double>();
      c.lasso.lambda_ratio = l.value("lambda_ratio", c.lasso.lambda_ratio);
      c.lasso.tol = l.value("tol", c.lasso.tol);
      c.lasso.max_iter = l.value("max_iter", c.lasso.max_iter);
      c.lasso.class_weights = l.value("class_weights", c.lasso.class_weights);
    }
    if (j.contains("impute")) {
      const auto s = j.at("impute").get<std::string>();
      if (s != "median" && s != "drop") throw ValidationError("lr config: impute must be median or drop");
      c.impute = s == "median" ? ImputeMode::median : ImputeMode::drop;
    }
    c.max_missing = j.value("max_missing", c.max_missing);
    c.seed = j.value("seed", c.seed);
    c.ci_level = j.value("ci_level", c.ci_level);
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("lr config: ") + e.what());
  }
  if (c.modalities.empty()) throw ValidationError("lr config: at least one modality is required");
  return c;
}

LrRun run_lr_loso(const FeatureTable& table, const PhaseStarts& phase_starts, const LrConfig& config,
                  unsigned threads) {
  if (!is_binary(config.task)) throw ValidationError("logistic regression supports the binary tasks only");
  const auto ids = participants_in(table.windows);
  LrRun run;
  run.plan = make_loso_plan(ids, config.seed);
  const auto columns = table.columns_for(config.modalities);
  if (columns.empty()) throw ValidationError("lr: the feature table has no columns for the requested modalities");

  struct FoldOut {
    bool used = false;
    LassoLogitModel model;
    DesignStats design;
    std::vector<WindowPrediction> preds;
  };
  std::vector<FoldOut> outs(run.plan.folds.size());
  parallel_for(run.plan.folds.size(), threads, [&](std::size_t f) {
    const auto& held = run.plan.folds[f].held_out;
    std::vector<std::size_t> train, test;
    for (std::size_t r = 0; r < table.size(); ++r) (table.windows[r].participant_id == held ? test : train).push_back(r);
    if (test.empty()) return;
    FoldOut& o = outs[f];
    o.design = fit_design(table, train, columns, config.impute, config.max_missing);
    const auto xtr = apply_design(o.design, table, train);
    std::vector<int> y;
    for (auto r : xtr.rows) y.push_back(static_cast<int>(table.windows[r].labels.value(config.task)));
    o.model = fit_lasso_logit(to_matrix(xtr.x), y, config.lasso);
    for (auto c : o.design.kept) o.model.columns.push_back(table.columns[c]);
    o.model.seed = derive_seed(config.seed, {0x1a, f});
    const auto xte = apply_design(o.design, table, test);
    if (xte.rows.empty()) return;
    const auto p = predict_proba(o.model, to_matrix(xte.x));
    for (std::size_t i = 0; i < xte.rows.size(); ++i) {
      auto wp = prediction_for(table.windows[xte.rows[i]], phase_starts, config.task);
      wp.score = p[i];
      o.preds.push_back(std::move(wp));
    }
    o.used = true;
  });
  for (std::size_t f = 0; f < outs.size(); ++f) {
    if (!outs[f].used) {
      run.plan.warnings.push_back("fold " + run.plan.folds[f].held_out + " has no test windows");
      continue;
    }
    run.predictions.insert(run.predictions.end(), outs[f].preds.begin(), outs[f].preds.end());
    run.models.push_back(std::move(outs[f].model));
    run.designs.push_back(std::move(outs[f].design));
    run.fold_ids.push_back(run.plan.folds[f].held_out);
  }
  run.report = aggregate(run.predictions, config.task, "lr", config.ci_level);
  io::Json mods = io::Json::array();
  for (auto m : config.modalities) mods.push_back(std::string(to_string(m)));
  run.report.meta = {{"modalities", mods}, {"config", config.to_json()}, {"folds", run.fold_ids.size()}};
  std::vector<FeatureColumn> candidates;
  for (auto c : columns) candidates.push_back(table.columns[c]);
  run.families = coefficient_family_report(run.models, candidates, std::string(to_string(config.task)));
  return run;
}

// CNN ---------------------------------------------------------------------------------

CnnRun run_cnn_loso(const nn::CnnData& data, const PhaseStarts& phase_starts, const nn::TrainConfig& config,
                    double ci_level, const FoldCallback& on_fold) {
  CnnRun run;
  const auto ids = participants_in(data.refs);
  run.plan = make_loso_plan(ids, config.seed);
  for (std::size_t f = 0; f < run.plan.folds.size(); ++f) {
    const auto& fold = run.plan.folds[f];
    const std::set<std::string> train_ids(fold.train.begin(), fold.train.end());
    const std::set<std::string> val_ids(fold.validation.begin(), fold.validation.end());
    std::vector<std::size_t> train, val, test;
    for (std::size_t r = 0; r < data.size(); ++r) {
      const auto& id = data.refs[r].participant_id;
      if (id == fold.held_out) test.push_back(r);
      else if (train_ids.count(id)) train.push_back(r);
      else if (val_ids.count(id)) val.push_back(r);
    }
    if (test.empty()) {
      run.plan.warnings.push_back("fold " + fold.held_out + " has no test windows");
      continue;
    }
    nn::TrainConfig cfg = config;
    cfg.seed = derive_seed(config.seed, {0xc44, f});
    nn::CnnModel model = nn::train_cnn(data, train, val, cfg);
    const auto out = nn::predict_cnn(model, data, test);
    for (std::size_t i = 0; i < test.size(); ++i) {
      auto wp = prediction_for(data.refs[test[i]], phase_starts, config.task);
      if (config.task == Task::phase_categorical) {
        wp.class_probs = out[i];
        wp.score = *std::max_element(out[i].begin(), out[i].end());
      } else {
        wp.score = out[i][0];
      }
      run.predictions.push_back(std::move(wp));
    }
    if (on_fold) on_fold(f, run.plan.folds.size(), model);
    run.models.push_back(std::move(model));
    run.fold_ids.push_back(fold.held_out);
  }
  run.report = aggregate(run.predictions, config.task, "cnn", ci_level);
  io::Json mods = io::Json::array();
  if (config.arch.use_arousal) mods.push_back("arousal");
  if (config.arch.use_accel) mods.push_back("accel");
  run.report.meta = {{"modalities", mods}, {"config", config.to_json()}, {"folds", run.fold_ids.size()}};
  return run;
}

// Sweeps --------------------------------------------------------------------------------

std::vector<SweepRow> window_sweep(const PreparedCohort& cohort, std::span<const double> lengths,
                                   const FeatureCatalog& catalog, const LrConfig& config, unsigned threads) {
  std::vector<SweepRow> rows;
  const auto starts = cohort.phase_starts();
  for (double len : lengths) {
    const WindowSpec spec = WindowSpec::quarter_step(len);
    const auto windows = make_windows(cohort, spec);
    const auto table = build_feature_table(windows, catalog, config.modalities, threads);
    SweepRow row;
    row.length_s = spec.length_s;
    row.step_s = spec.step_s;
    row.windows = windows.size();
    row.report = run_lr_loso(table, starts, config, threads).report;
    row.report.meta["window"] = spec_json(spec);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::vector<std::string> report_fields(const EvalReport& r) {
  auto f = [](double v) { return std::isfinite(v) ? io::format_double(v) : std::string(); };
  return {f(r.macro_auroc.mean),         f(r.macro_auroc.std),          f(r.macro_auprc.mean),
          f(r.macro_auprc.std),          f(r.macro_random_auprc.mean), f(r.pooled_treatment.auroc),
          f(r.pooled_treatment.auprc),   f(r.pooled_treatment.random_auprc), f(r.pooled_all.auroc),
          f(r.pooled_all.auprc),         f(r.pooled_all.random_auprc)};
}

const std::vector<std::string> kReportHeader = {
    "macro_auroc",          "macro_auroc_std",   "macro_auprc",       "macro_auprc_std",
    "macro_random_auprc",   "treatment_auroc",   "treatment_auprc",   "treatment_random_auprc",
    "all_auroc",            "all_auprc",         "all_random_auprc"};

}  // namespace

void write_sweep_csv(std::span<const SweepRow> rows, const fs::path& csv_path) {
  io::CsvWriter w(csv_path);
  std::vector<std::string> header{"task", "length_s", "step_s", "windows"};
  header.insert(header.end(), kReportHeader.begin(), kReportHeader.end());
  w.row(header);
  for (const auto& r : rows) {
    std::vector<std::string> f{std::string(to_string(r.report.task)), io::format_double(r.length_s),
                               io::format_double(r.step_s), std::to_string(r.windows)};
    auto m = report_fields(r.report);
    f.insert(f.end(), m.begin(), m.end());
    w.row(f);
  }
  w.close();
}

std::vector<EffectSweepRow> effect_sweep(const SynthConfig& base, std::span<const double> scales,
                                         const PreprocessConfig& preprocess, const FeatureCatalog& catalog,
                                         const LrConfig& config, unsigned threads) {
  if (scales.size() < 2 || std::find(scales.begin(), scales.end(), 0.0) == scales.end()) {
    throw ValidationError("effect sweep: needs at least two effect sizes including 0");
  }
  std::vector<EffectSweepRow> rows;
  const auto estimator = default_arousal_surrogate();
  for (double k : scales) {
    SynthConfig cfg = base;
    cfg.effect = base.effect.scaled(k);
    const Cohort cohort = generate_cohort(cfg);
    const PreparedCohort prepared = preprocess_cohort(cohort, preprocess, estimator, threads);
    const auto windows = make_windows(prepared, WindowSpec::feature_default());
    const auto table = build_feature_table(windows, catalog, config.modalities, threads);
    EffectSweepRow row;
    row.scale = k;
    row.report = run_lr_loso(table, prepared.phase_starts(), config, threads).report;
    row.report.meta["effect"] = cfg.effect.to_json();
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_effect_sweep_csv(std::span<const EffectSweepRow> rows, const fs::path& csv_path) {
  io::CsvWriter w(csv_path);
  std::vector<std::string> header{"task", "effect_scale"};
  header.insert(header.end(), kReportHeader.begin(), kReportHeader.end());
  w.row(header);
  for (const auto& r : rows) {
    std::vector<std::string> f{std::string(to_string(r.report.task)), io::format_double(r.scale)};
    auto m = report_fields(r.report);
    f.insert(f.end(), m.begin(), m.end());
    w.row(f);
  }
  w.close();
}

}  // namespace impairdetect
