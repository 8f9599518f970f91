#include "impairdetect/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "impairdetect/pipeline.hpp"

namespace impairdetect::cli {

namespace fs = std::filesystem;

// Manifest ------------------------------------------------------------------------------

io::Json RunManifest::to_json() const {
  return {{"command", command},          {"argv", argv},
          {"config", config},            {"seeds", seeds},
          {"inputs", inputs},            {"outputs", outputs},
          {"tool_version", tool_version}, {"started_at", started_at},
          {"finished_at", finished_at}};
}

RunManifest RunManifest::from_json(const io::Json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.argv = j.value("argv", std::vector<std::string>{});
    m.config = j.value("config", io::Json::object());
    m.seeds = j.value("seeds", io::Json::object());
    m.inputs = j.value("inputs", io::Json::array());
    m.outputs = j.at("outputs");
    m.tool_version = j.value("tool_version", std::string());
    m.started_at = j.value("started_at", std::string());
    m.finished_at = j.value("finished_at", std::string());
    return m;
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("run manifest: ") + e.what());
  }
}

io::Json hash_outputs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != kManifestName) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  io::Json out = io::Json::object();
  for (const auto& f : files) out[fs::relative(f, dir).generic_string()] = io::sha256_file(f);
  return out;
}

std::string verify_stage_dir(const fs::path& dir) {
  const fs::path mpath = dir / kManifestName;
  if (!fs::exists(mpath)) throw ValidationError(dir.string() + ": no " + kManifestName + " (not a stage output)");
  const auto m = RunManifest::from_json(io::read_json(mpath));
  for (const auto& [rel, sha] : m.outputs.items()) {
    const fs::path f = dir / rel;
    if (!fs::exists(f)) throw ValidationError(dir.string() + ": declared output " + rel + " is missing");
    if (io::sha256_file(f) != sha.get<std::string>()) {
      throw ValidationError(dir.string() + ": " + rel + " does not match its manifest hash");
    }
  }
  for (const auto& in : m.inputs) {
    const fs::path up = in.at("path").get<std::string>();
    const fs::path file = up / in.value("file", std::string(kManifestName));
    if (fs::exists(file) && io::sha256_file(file) != in.at("sha256").get<std::string>()) {
      throw ValidationError(dir.string() + ": upstream " + file.string() + " changed since this stage ran");
    }
  }
  return io::sha256_file(mpath);
}

namespace {

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

/// Stage outputs are immutable unless --force replaces them.
void prepare_out(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ValidationError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ValidationError(dir.string() + " already exists; pass --force to replace it");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

io::Json input_entry(const fs::path& dir, const std::string& sha, const char* file = kManifestName) {
  return {{"path", fs::absolute(dir).lexically_normal().string()}, {"file", file}, {"sha256", sha}};
}

void finish(RunManifest& m, const fs::path& out) {
  m.outputs = hash_outputs(out);
  m.finished_at = timestamp();
  io::write_json(out / kManifestName, m.to_json());
}

std::uint64_t parse_seed(const std::string& s, const char* what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used, 0);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || s.front() == '-') {
    throw ValidationError(std::string(what) + ": not a non-negative integer: '" + s + "'");
  }
  return v;
}

/// --seed, else a seed in the config file, else IMPAIRDETECT_SEED, else 0.
std::uint64_t resolve_seed(const std::string& flag, const io::Json& config) {
  if (!flag.empty()) return parse_seed(flag, "--seed");
  if (config.is_object() && config.contains("seed")) {
    if (!config.at("seed").is_number_unsigned()) throw ValidationError("config: seed must be a non-negative integer");
    return config.at("seed").get<std::uint64_t>();
  }
  if (const char* env = std::getenv("IMPAIRDETECT_SEED"); env && *env) return parse_seed(env, "IMPAIRDETECT_SEED");
  return 0;
}

unsigned resolve_threads(int requested) {
  if (requested < 0) throw ValidationError("--threads must be positive");
  if (requested > 0) return static_cast<unsigned>(requested);
  return std::max(1u, std::thread::hardware_concurrency());
}

io::Json read_config(const std::string& path) { return path.empty() ? io::Json::object() : io::read_json(path); }

std::vector<FeatureModality> parse_modalities(const std::string& s) {
  std::vector<FeatureModality> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    const auto m = parse_feature_modality(part);
    if (std::find(out.begin(), out.end(), m) != out.end()) throw ValidationError("modality listed twice: " + part);
    out.push_back(m);
  }
  if (out.empty()) throw ValidationError("at least one modality is required");
  return out;
}

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  for (auto part : io::split(s, ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(io::parse_double(part));
    } catch (const std::exception&) {
      throw ValidationError(std::string(what) + ": bad number '" + std::string(part) + "'");
    }
  }
  if (out.empty()) throw ValidationError(std::string(what) + ": empty list");
  return out;
}

void write_phase_starts(const PhaseStarts& starts, const fs::path& path) {
  io::Json a = io::Json::array();
  for (const auto& [key, t] : starts) a.push_back({{"participant_id", key.first}, {"phase", key.second}, {"start_s", t}});
  io::write_json(path, a);
}

PhaseStarts read_phase_starts(const fs::path& path) {
  PhaseStarts out;
  try {
    for (const auto& e : io::read_json(path)) {
      out[{e.at("participant_id").get<std::string>(), e.at("phase").get<int>()}] = e.at("start_s").get<double>();
    }
  } catch (const io::Json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return out;
}

/// Training-run metadata that evaluate checks against its flags.
void write_run_meta(const fs::path& out, const char* model, Task task) {
  io::write_json(out / "run.json", {{"model", model}, {"task", std::string(to_string(task))}});
}

std::string fold_name(std::size_t f, const std::string& id) {
  std::ostringstream s;
  s << "fold_" << std::setw(2) << std::setfill('0') << f << "_" << id;
  return s.str();
}

void write_families(std::span<const FamilyCoefficient> families, const fs::path& path) {
  io::CsvWriter w(path);
  w.row({"task", "modality", "family", "mean_abs_coef", "std_abs_coef", "folds", "missing"});
  for (const auto& f : families) {
    w.row({f.task, std::string(to_string(f.modality)), f.family, io::format_double(f.mean), io::format_double(f.std),
           std::to_string(f.folds), f.missing ? "1" : "0"});
  }
  w.close();
}

// Shared option groups ------------------------------------------------------------------

struct Common {
  std::string out;
  bool force = false;
  std::string seed;
  int threads = 0;
};

void add_common(CLI::App* sub, Common& c, bool with_seed, bool with_threads) {
  sub->add_option("--out", c.out, "Output directory")->required();
  sub->add_flag("--force", c.force, "Replace an existing output directory");
  if (with_seed) sub->add_option("--seed", c.seed, "Root seed (default: config, then IMPAIRDETECT_SEED, then 0)");
  if (with_threads) sub->add_option("--threads", c.threads, "Worker threads (default: all cores)");
}

RunManifest start(const std::string& command, const std::vector<std::string>& argv) {
  RunManifest m;
  m.command = command;
  m.argv = argv;
  m.started_at = timestamp();
  return m;
}

// Stages --------------------------------------------------------------------------------

struct SynthArgs {
  Common c;
  std::string config;
  bool desk = false;
  double effect_scale = 1.0;
};

void run_synth(const SynthArgs& a, RunManifest& m) {
  const io::Json cj = read_config(a.config);
  SynthConfig cfg = a.desk ? SynthConfig::desk_default() : SynthConfig{};
  if (!cj.empty()) {
    // Keys present in the file override the chosen base; others keep it.
    io::Json merged = cfg.to_json();
    merged.merge_patch(cj);
    cfg = SynthConfig::from_json(merged);
  }
  cfg.seed = resolve_seed(a.c.seed, cj);
  cfg.effect = cfg.effect.scaled(a.effect_scale);
  cfg.validate();
  prepare_out(a.c.out, a.c.force);
  generate_cohort(cfg, a.c.out);
  m.config = cfg.to_json();
  m.seeds = {{"root", cfg.seed}};
}

struct PreprocessArgs {
  Common c;
  std::string manifest, arousal_model, config, normalization;
};

void run_preprocess(const PreprocessArgs& a, RunManifest& m) {
  const fs::path mpath = a.manifest;
  if (!fs::exists(mpath)) throw ValidationError(mpath.string() + ": no such cohort manifest");
  const fs::path cohort_dir = mpath.parent_path().empty() ? fs::path(".") : mpath.parent_path();
  // Cohorts written by synth carry a run manifest; external cohorts are pinned by their manifest hash.
  if (fs::exists(cohort_dir / kManifestName)) {
    m.inputs.push_back(input_entry(cohort_dir, verify_stage_dir(cohort_dir)));
  } else {
    m.inputs.push_back(input_entry(cohort_dir, io::sha256_file(mpath), "manifest.json"));
  }
  PreprocessConfig cfg = a.config.empty() ? PreprocessConfig{} : PreprocessConfig::from_json(io::read_json(a.config));
  if (!a.normalization.empty()) {
    io::Json j = cfg.to_json();
    j["normalization"] = a.normalization;
    cfg = PreprocessConfig::from_json(j);
  }
  const auto estimator = a.arousal_model.empty() ? default_arousal_surrogate()
                                                 : LogisticArousalSurrogate::load(a.arousal_model);
  const Cohort cohort = ingest_cohort(mpath);
  const unsigned threads = resolve_threads(a.c.threads);
  const auto prepared = preprocess_cohort(cohort, cfg, estimator, threads);
  prepare_out(a.c.out, a.c.force);
  prepared.write(a.c.out);
  m.config = {{"preprocess", cfg.to_json()}, {"arousal_model", estimator.to_json()}, {"threads", threads}};
}

struct WindowArgs {
  Common c;
  std::string input, spec = "feature";
  double length = 0.0, step = 0.0;
};

void run_window(const WindowArgs& a, RunManifest& m) {
  m.inputs.push_back(input_entry(a.input, verify_stage_dir(a.input)));
  WindowSpec spec;
  if (a.spec == "feature") {
    spec = WindowSpec::feature_default();
  } else if (a.spec == "cnn") {
    spec = WindowSpec::cnn_default();
  } else {
    throw ValidationError("--spec must be cnn or feature");
  }
  if (a.length > 0) spec.length_s = a.length;
  if (a.step > 0) spec.step_s = a.step;
  spec.validate();
  const auto prepared = PreparedCohort::read(a.input);
  SegmentStats stats;
  const auto windows = make_windows(prepared, spec, &stats);
  prepare_out(a.c.out, a.c.force);
  write_windows(windows, a.c.out);
  write_phase_starts(prepared.phase_starts(), fs::path(a.c.out) / "phase_starts.json");
  m.config = {{"spec", a.spec},
              {"length_s", spec.length_s},
              {"step_s", spec.step_s},
              {"min_coverage", spec.min_coverage},
              {"windows", windows.size()},
              {"candidates", stats.candidates},
              {"dropped_coverage", stats.dropped_coverage}};
}

struct FeaturizeArgs {
  Common c;
  std::string windows, catalog, modalities = "arousal,accel";
};

void run_featurize(const FeaturizeArgs& a, RunManifest& m) {
  m.inputs.push_back(input_entry(a.windows, verify_stage_dir(a.windows)));
  const auto catalog = a.catalog.empty() ? FeatureCatalog::default_catalog() : FeatureCatalog::load(a.catalog);
  const auto mods = parse_modalities(a.modalities);
  const auto windows = read_windows(a.windows);
  const unsigned threads = resolve_threads(a.c.threads);
  const auto table = build_feature_table(windows, catalog, mods, threads);
  prepare_out(a.c.out, a.c.force);
  const fs::path out = a.c.out;
  write_feature_table(table, out / "features.csv");
  io::write_json(out / "catalog.json", catalog.to_json());
  fs::copy_file(fs::path(a.windows) / "phase_starts.json", out / "phase_starts.json");
  m.config = {{"modalities", a.modalities}, {"catalog_features", catalog.features.size()}, {"threads", threads}};
}

struct TrainLrArgs {
  Common c;
  std::string features, task = "early", lambda = "auto", folds = "loso", modalities, config;
};

void run_train_lr(const TrainLrArgs& a, RunManifest& m) {
  m.inputs.push_back(input_entry(a.features, verify_stage_dir(a.features)));
  if (a.folds != "loso") throw ValidationError("--folds: only loso is supported");
  const io::Json cj = read_config(a.config);
  LrConfig cfg = LrConfig::from_json(cj);
  cfg.task = parse_task(a.task);
  if (!is_binary(cfg.task)) throw ValidationError("train-lr: task must be early or above");
  if (a.lambda != "auto") {
    cfg.lasso.lambda = parse_list(a.lambda, "--lambda").front();
    if (!(cfg.lasso.lambda >= 0)) throw ValidationError("--lambda must be auto or a non-negative number");
  }
  if (!a.modalities.empty()) cfg.modalities = parse_modalities(a.modalities);
  cfg.seed = resolve_seed(a.c.seed, cj);
  const fs::path in = a.features;
  const auto catalog = FeatureCatalog::from_json(io::read_json(in / "catalog.json"));
  const auto table = read_feature_table(in / "features.csv", catalog);
  const auto starts = read_phase_starts(in / "phase_starts.json");
  const unsigned threads = resolve_threads(a.c.threads);
  const auto run = run_lr_loso(table, starts, cfg, threads);
  prepare_out(a.c.out, a.c.force);
  const fs::path out = a.c.out;
  write_run_meta(out, "lr", cfg.task);
  write_predictions(run.predictions, out / "predictions.csv");
  io::write_json(out / "plan.json", run.plan.to_json());
  fs::create_directories(out / "models");
  for (std::size_t f = 0; f < run.models.size(); ++f) {
    io::Json j = run.models[f].to_json();
    j["design"] = run.designs[f].to_json(table);
    io::write_json(out / "models" / (fold_name(f, run.fold_ids[f]) + ".json"), j);
  }
  write_families(run.families, out / "coefficients.csv");
  io::write_json(out / "summary.json", run.report.meta);
  m.config = cfg.to_json();
  m.seeds = {{"root", cfg.seed}};
}

struct TrainCnnArgs {
  Common c;
  std::string windows, task = "early", config, modalities, groups = "all";
  int epochs = 0;
  double ci_level = 0.95;
};

void run_train_cnn(const TrainCnnArgs& a, RunManifest& m) {
  m.inputs.push_back(input_entry(a.windows, verify_stage_dir(a.windows)));
  const io::Json cj = read_config(a.config);
  nn::TrainConfig cfg = cj.empty() ? nn::TrainConfig{} : nn::TrainConfig::from_json(cj);
  cfg.task = parse_task(a.task);
  if (a.epochs > 0) cfg.max_epochs = a.epochs;
  if (!a.modalities.empty()) {
    const auto mods = parse_modalities(a.modalities);
    cfg.arch.use_arousal = std::find(mods.begin(), mods.end(), FeatureModality::arousal) != mods.end();
    cfg.arch.use_accel = std::find(mods.begin(), mods.end(), FeatureModality::accel) != mods.end();
  }
  cfg.seed = resolve_seed(a.c.seed, cj);
  const fs::path in = a.windows;
  // phase models are meant to be trained within one group at a time
  const auto windows = filter_windows(read_windows(in), parse_group_scope(a.groups));
  if (windows.empty()) throw ValidationError("train-cnn: no windows in group scope " + a.groups);
  const auto data = nn::make_cnn_data(windows, cfg.task);
  const auto starts = read_phase_starts(in / "phase_starts.json");
  prepare_out(a.c.out, a.c.force);
  const fs::path out = a.c.out;
  const auto run = run_cnn_loso(data, starts, cfg, a.ci_level,
                                [&](std::size_t f, std::size_t n, const nn::CnnModel& model) {
                                  std::cerr << "fold " << f + 1 << "/" << n << " best epoch "
                                            << model.history.best_epoch << "\n";
                                });
  write_run_meta(out, "cnn", cfg.task);
  write_predictions(run.predictions, out / "predictions.csv");
  io::write_json(out / "plan.json", run.plan.to_json());
  for (std::size_t f = 0; f < run.models.size(); ++f) run.models[f].save(out / "models" / fold_name(f, run.fold_ids[f]));
  io::write_json(out / "summary.json", run.report.meta);
  m.config = cfg.to_json();
  m.config["groups"] = a.groups;
  m.seeds = {{"root", cfg.seed}};
}

struct EvaluateArgs {
  Common c;
  std::string run, model, task, scope = "all";
  double ci_level = 0.95;
};

void run_evaluate(const EvaluateArgs& a, RunManifest& m) {
  m.inputs.push_back(input_entry(a.run, verify_stage_dir(a.run)));
  const fs::path in = a.run;
  const io::Json meta = io::read_json(in / "run.json");
  const std::string model = meta.at("model").get<std::string>();
  const Task task = parse_task(meta.at("task").get<std::string>());
  if (!a.model.empty() && a.model != model) {
    throw ValidationError("evaluate: run directory holds a " + model + " run, not " + a.model);
  }
  if (!a.task.empty() && parse_task(a.task) != task) {
    throw ValidationError("evaluate: run was trained for task " + std::string(to_string(task)));
  }
  const GroupScope scope = parse_group_scope(a.scope);
  auto preds = read_predictions(in / "predictions.csv");
  std::erase_if(preds, [&](const WindowPrediction& p) { return !in_scope(p.group, scope); });
  if (preds.empty()) throw ValidationError("evaluate: no predictions in scope " + a.scope);
  EvalReport report = aggregate(preds, task, model, a.ci_level);
  report.meta = io::read_json(in / "summary.json");
  report.meta["scope"] = std::string(to_string(scope));
  prepare_out(a.c.out, a.c.force);
  report.write(a.c.out);
  if (is_binary(task)) write_cma_curve(cma_smooth(preds), fs::path(a.c.out) / "auroc_vs_time.csv");
  m.config = {{"model", model}, {"task", std::string(to_string(task))}, {"scope", a.scope}, {"ci_level", a.ci_level}};
}

struct SweepArgs {
  Common c;
  std::string kind, prepared, config, lengths, scales = "0,0.25,0.5,1", task = "early", modalities, catalog,
      normalization;
  bool desk = false;
};

void run_sweep(const SweepArgs& a, RunManifest& m) {
  LrConfig lr;
  lr.task = parse_task(a.task);
  if (!is_binary(lr.task)) throw ValidationError("sweep: task must be early or above");
  if (!a.modalities.empty()) lr.modalities = parse_modalities(a.modalities);
  const auto catalog = a.catalog.empty() ? FeatureCatalog::default_catalog() : FeatureCatalog::load(a.catalog);
  const unsigned threads = resolve_threads(a.c.threads);
  const fs::path out = a.c.out;
  if (a.kind == "window") {
    if (a.prepared.empty()) throw ValidationError("sweep --kind window needs --prepared");
    m.inputs.push_back(input_entry(a.prepared, verify_stage_dir(a.prepared)));
    lr.seed = resolve_seed(a.c.seed, io::Json::object());
    std::vector<double> lengths(kSweepLengths.begin(), kSweepLengths.end());
    if (!a.lengths.empty()) lengths = parse_list(a.lengths, "--lengths");
    const auto prepared = PreparedCohort::read(a.prepared);
    const auto rows = window_sweep(prepared, lengths, catalog, lr, threads);
    prepare_out(out, a.c.force);
    write_sweep_csv(rows, out / "sweep.csv");
    m.config = {{"kind", "window"}, {"lengths", lengths}, {"lr", lr.to_json()}};
  } else if (a.kind == "effect") {
    const io::Json cj = read_config(a.config);
    SynthConfig base = a.desk ? SynthConfig::desk_default() : SynthConfig{};
    if (!cj.empty()) {
      io::Json merged = base.to_json();
      merged.merge_patch(cj);
      base = SynthConfig::from_json(merged);
    }
    base.seed = resolve_seed(a.c.seed, cj);
    base.validate();
    lr.seed = base.seed;
    PreprocessConfig pc;
    if (!a.normalization.empty()) pc = PreprocessConfig::from_json({{"normalization", a.normalization}});
    const auto scales = parse_list(a.scales, "--scales");
    const auto rows = effect_sweep(base, scales, pc, catalog, lr, threads);
    prepare_out(out, a.c.force);
    write_effect_sweep_csv(rows, out / "sweep.csv");
    m.config = {{"kind", "effect"}, {"scales", scales}, {"synth", base.to_json()}, {"preprocess", pc.to_json()},
                {"lr", lr.to_json()}};
    m.seeds = {{"root", base.seed}};
  } else {
    throw ValidationError("--kind must be window or effect");
  }
}

struct ReportArgs {
  Common c;
  std::vector<std::string> reports, sweeps;
};

void run_report(const ReportArgs& a, RunManifest& m) {
  if (a.reports.empty() && a.sweeps.empty()) throw ValidationError("report: pass --reports and/or --sweeps");
  std::vector<EvalReport> reports;
  for (const auto& d : a.reports) {
    m.inputs.push_back(input_entry(d, verify_stage_dir(d)));
    reports.push_back(EvalReport::from_json(io::read_json(fs::path(d) / "report.json")));
  }
  std::vector<RenderedTable> sweeps;
  for (const auto& d : a.sweeps) {
    m.inputs.push_back(input_entry(d, verify_stage_dir(d)));
    sweeps.push_back(render_sweep(fs::path(d) / "sweep.csv"));
  }
  std::optional<RenderedTable> table;
  if (!reports.empty()) table = render_reports(reports);
  prepare_out(a.c.out, a.c.force);
  const fs::path out = a.c.out;
  std::string text;
  if (table) {
    io::write_text(out / "results.csv", table->csv);
    text += table->text;
  }
  for (std::size_t i = 0; i < sweeps.size(); ++i) {
    io::write_text(out / ("sweep_" + std::to_string(i) + ".csv"), sweeps[i].csv);
    text += (text.empty() ? "" : "\n") + sweeps[i].text;
  }
  io::write_text(out / "tables.txt", text);
  std::cout << text;
  m.config = {{"reports", a.reports}, {"sweeps", a.sweeps}};
}

// Rendering -----------------------------------------------------------------------------

std::string cell(double v, int digits = 3) {
  if (!std::isfinite(v)) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string with_std(const MetricSummary& s) {
  if (!std::isfinite(s.mean)) return "n/a";
  return cell(s.mean) + " +- " + cell(s.std);
}

std::string text_grid(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    if (width.size() < r.size()) width.resize(r.size(), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      out += rows[i][c];
      if (c + 1 < rows[i].size()) out += std::string(width[c] - rows[i][c].size() + 2, ' ');
    }
    out += "\n";
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out += std::string(total - 2, '-') + "\n";
    }
  }
  return out;
}

std::string csv_join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ",";
    const bool quote = cells[i].find_first_of(",\"") != std::string::npos;
    if (quote) {
      s += '"';
      for (char ch : cells[i]) s += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      s += '"';
    } else {
      s += cells[i];
    }
  }
  return s + "\n";
}

std::string report_label(const EvalReport& r) {
  std::string label = r.model;
  if (r.meta.contains("modalities") && r.meta.at("modalities").is_array()) {
    std::string mods;
    for (const auto& v : r.meta.at("modalities")) mods += (mods.empty() ? "" : "+") + v.get<std::string>();
    if (!mods.empty()) label += " (" + mods + ")";
  }
  if (r.meta.contains("scope") && r.meta.at("scope").is_string()) label += " [" + r.meta.at("scope").get<std::string>() + "]";
  return label;
}

}  // namespace

RenderedTable render_reports(std::span<const EvalReport> reports) {
  if (reports.empty()) throw ValidationError("report: at least one report is required");
  std::vector<std::string> labels;
  std::vector<Task> tasks;
  std::set<std::pair<std::string, Task>> seen;
  for (const auto& r : reports) {
    const auto label = report_label(r);
    if (!seen.insert({label, r.task}).second) {
      throw ValidationError("report: conflicting reports for '" + label + "' on task " + std::string(to_string(r.task)));
    }
    if (std::find(labels.begin(), labels.end(), label) == labels.end()) labels.push_back(label);
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
  }
  auto find = [&](const std::string& label, Task t) -> const EvalReport* {
    for (const auto& r : reports) {
      if (r.task == t && report_label(r) == label) return &r;
    }
    return nullptr;
  };
  struct Row {
    std::string scope, metric;
    std::function<std::pair<std::string, std::string>(const EvalReport&)> get;  // csv value, text value
  };
  auto pair_of = [](double v) { return std::pair{io::format_double(v), cell(v)}; };
  const std::vector<Row> binary_rows = {
      {"macro", "auroc", [](const EvalReport& r) { return std::pair{io::format_double(r.macro_auroc.mean), with_std(r.macro_auroc)}; }},
      {"macro", "auroc_std", [&](const EvalReport& r) { return pair_of(r.macro_auroc.std); }},
      {"macro", "auprc", [](const EvalReport& r) { return std::pair{io::format_double(r.macro_auprc.mean), with_std(r.macro_auprc)}; }},
      {"macro", "auprc_std", [&](const EvalReport& r) { return pair_of(r.macro_auprc.std); }},
      {"macro", "random_auprc", [&](const EvalReport& r) { return pair_of(r.macro_random_auprc.mean); }},
      {"pooled_treatment", "auroc", [&](const EvalReport& r) { return pair_of(r.pooled_treatment.auroc); }},
      {"pooled_treatment", "auprc", [&](const EvalReport& r) { return pair_of(r.pooled_treatment.auprc); }},
      {"pooled_treatment", "random_auprc", [&](const EvalReport& r) { return pair_of(r.pooled_treatment.random_auprc); }},
      {"pooled_all", "auroc", [&](const EvalReport& r) { return pair_of(r.pooled_all.auroc); }},
      {"pooled_all", "auprc", [&](const EvalReport& r) { return pair_of(r.pooled_all.auprc); }},
      {"pooled_all", "random_auprc", [&](const EvalReport& r) { return pair_of(r.pooled_all.random_auprc); }},
  };
  auto reg = [](const ScopeMetrics& s, int which) {
    if (!s.regression) return std::numeric_limits<double>::quiet_NaN();
    return which == 0 ? s.regression->mae : which == 1 ? s.regression->pearson : s.regression->auroc;
  };
  const std::vector<Row> regression_rows = {
      {"pooled_treatment", "mae", [&](const EvalReport& r) { return pair_of(reg(r.pooled_treatment, 0)); }},
      {"pooled_treatment", "pearson", [&](const EvalReport& r) { return pair_of(reg(r.pooled_treatment, 1)); }},
      {"pooled_treatment", "auroc", [&](const EvalReport& r) { return pair_of(reg(r.pooled_treatment, 2)); }},
      {"pooled_all", "mae", [&](const EvalReport& r) { return pair_of(reg(r.pooled_all, 0)); }},
      {"pooled_all", "pearson", [&](const EvalReport& r) { return pair_of(reg(r.pooled_all, 1)); }},
      {"pooled_all", "auroc", [&](const EvalReport& r) { return pair_of(reg(r.pooled_all, 2)); }},
  };

  std::vector<std::string> header{"task", "scope", "metric"};
  header.insert(header.end(), labels.begin(), labels.end());
  std::string csv = csv_join(header);
  std::vector<std::vector<std::string>> grid{header};
  for (Task t : tasks) {
    const auto& rows = t == Task::bac_regression ? regression_rows : binary_rows;
    for (const auto& row : rows) {
      std::vector<std::string> c{std::string(to_string(t)), row.scope, row.metric};
      std::vector<std::string> g = c;
      const bool std_row = row.metric.size() > 4 && row.metric.ends_with("_std");
      for (const auto& label : labels) {
        const EvalReport* r = find(label, t);
        if (!r) {
          c.push_back("");
          g.push_back("-");
          continue;
        }
        auto [cv, tv] = row.get(*r);
        c.push_back(cv == "nan" ? "" : cv);
        g.push_back(tv);
      }
      csv += csv_join(c);
      if (!std_row) grid.push_back(std::move(g));  // text rows show mean +- std together
    }
  }
  return {csv, text_grid(grid)};
}

RenderedTable render_sweep(const fs::path& sweep_csv) {
  const auto t = io::read_csv(sweep_csv);
  auto col = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - t.header.begin());
  };
  const auto task_col = col("task");
  auto key_col = col("length_s");
  std::string key_name = "length_s";
  if (!key_col) {
    key_col = col("effect_scale");
    key_name = "effect_scale";
  }
  if (!task_col || !key_col) throw ValidationError(sweep_csv.string() + ": not a sweep table");
  std::set<std::string> tasks;
  for (const auto& r : t.rows) tasks.insert(r.at(*task_col));
  if (tasks.size() != 1) throw ValidationError(sweep_csv.string() + ": conflicting task metadata");
  std::vector<std::string> header{"task", "metric"};
  for (const auto& r : t.rows) header.push_back(key_name + "=" + r.at(*key_col));
  std::string csv = csv_join(header);
  std::vector<std::vector<std::string>> grid{header};
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == *task_col || c == *key_col) continue;
    std::vector<std::string> line{*tasks.begin(), t.header[c]};
    std::vector<std::string> g = line;
    for (const auto& r : t.rows) {
      line.push_back(r.at(c));
      double v = std::numeric_limits<double>::quiet_NaN();
      try {
        if (!r.at(c).empty()) v = io::parse_double(r.at(c));
      } catch (const std::exception&) {
      }
      g.push_back(t.header[c] == "windows" || t.header[c] == "step_s" ? r.at(c) : cell(v));
    }
    csv += csv_join(line);
    grid.push_back(std::move(g));
  }
  return {csv, text_grid(grid)};
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Smartwatch impairment detection pipeline", "impairdetect"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic cohort");
  add_common(s, synth.c, true, false);
  s->add_option("--config", synth.config, "SynthConfig JSON; keys override the base");
  s->add_flag("--desk", synth.desk, "Start from the desk-scale cohort (10-minute phases)");
  s->add_option("--effect-scale", synth.effect_scale, "Multiply the planted effect")->check(CLI::NonNegativeNumber);

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Clean, normalize and estimate arousal");
  add_common(p, pre.c, false, true);
  p->add_option("--manifest", pre.manifest, "Cohort manifest.json")->required();
  p->add_option("--arousal-model", pre.arousal_model, "Surrogate arousal model JSON");
  p->add_option("--config", pre.config, "Preprocess config JSON");
  p->add_option("--normalization", pre.normalization, "participant or participant_phase");

  WindowArgs win;
  auto* w = app.add_subcommand("window", "Segment prepared streams into windows");
  add_common(w, win.c, false, false);
  w->add_option("--input", win.input, "preprocess output directory")->required();
  w->add_option("--spec", win.spec, "cnn or feature");
  w->add_option("--length", win.length, "Window length in seconds")->check(CLI::PositiveNumber);
  w->add_option("--step", win.step, "Window step in seconds")->check(CLI::PositiveNumber);

  FeaturizeArgs feat;
  auto* f = app.add_subcommand("featurize", "Extract catalog features per window");
  add_common(f, feat.c, false, true);
  f->add_option("--windows", feat.windows, "window output directory")->required();
  f->add_option("--catalog", feat.catalog, "Feature catalog JSON");
  f->add_option("--modalities", feat.modalities, "Comma list of arousal, accel");

  TrainLrArgs lr;
  auto* l = app.add_subcommand("train-lr", "LOSO LASSO-logistic baseline");
  add_common(l, lr.c, true, true);
  l->add_option("--features", lr.features, "featurize output directory")->required();
  l->add_option("--task", lr.task, "early or above");
  l->add_option("--lambda", lr.lambda, "auto or an absolute L1 strength");
  l->add_option("--folds", lr.folds, "loso");
  l->add_option("--modalities", lr.modalities, "Comma list of arousal, accel");
  l->add_option("--config", lr.config, "LR config JSON");

  TrainCnnArgs cnn;
  auto* c = app.add_subcommand("train-cnn", "LOSO two-tower CNN");
  add_common(c, cnn.c, true, false);
  c->add_option("--windows", cnn.windows, "window output directory (cnn spec)")->required();
  c->add_option("--task", cnn.task, "early, above, phase or bac");
  c->add_option("--config", cnn.config, "Training config JSON");
  c->add_option("--epochs", cnn.epochs, "Override max_epochs")->check(CLI::PositiveNumber);
  c->add_option("--modalities", cnn.modalities, "Comma list of arousal, accel");
  c->add_option("--groups", cnn.groups, "all, treatment or control participants");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Metrics, confidence intervals and curves for a run");
  add_common(e, ev.c, false, false);
  e->add_option("--run", ev.run, "train-lr or train-cnn output directory")->required();
  e->add_option("--model", ev.model, "lr or cnn (checked against the run)");
  e->add_option("--task", ev.task, "early, above, phase or bac (checked against the run)");
  e->add_option("--scope", ev.scope, "treatment or all");
  e->add_option("--ci-level", ev.ci_level, "Confidence level")->check(CLI::Range(0.5, 0.9999));

  SweepArgs sw;
  auto* sp = app.add_subcommand("sweep", "Window-length or effect-size sweep with the LR pipeline");
  add_common(sp, sw.c, true, true);
  sp->add_option("--kind", sw.kind, "window or effect")->required();
  sp->add_option("--prepared", sw.prepared, "preprocess output directory (window sweep)");
  sp->add_option("--lengths", sw.lengths, "Comma list of window lengths");
  sp->add_option("--config", sw.config, "SynthConfig JSON (effect sweep)");
  sp->add_flag("--desk", sw.desk, "Desk-scale base cohort (effect sweep)");
  sp->add_option("--scales", sw.scales, "Comma list of effect scales including 0");
  sp->add_option("--normalization", sw.normalization, "participant or participant_phase (effect sweep)");
  sp->add_option("--task", sw.task, "early or above");
  sp->add_option("--modalities", sw.modalities, "Comma list of arousal, accel");
  sp->add_option("--catalog", sw.catalog, "Feature catalog JSON");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Consolidated result tables");
  add_common(r, rep.c, false, false);
  r->add_option("--reports", rep.reports, "evaluate output directories");
  r->add_option("--sweeps", rep.sweeps, "sweep output directories");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "error: " << ex.what() << "\n\n" << app.help();
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  std::vector<std::string> rest(args.begin() + 1, args.end());
  RunManifest manifest = start(name, rest);
  const std::map<std::string, std::pair<std::string*, std::function<void()>>> table = {
      {"synth", {&synth.c.out, [&] { run_synth(synth, manifest); }}},
      {"preprocess", {&pre.c.out, [&] { run_preprocess(pre, manifest); }}},
      {"window", {&win.c.out, [&] { run_window(win, manifest); }}},
      {"featurize", {&feat.c.out, [&] { run_featurize(feat, manifest); }}},
      {"train-lr", {&lr.c.out, [&] { run_train_lr(lr, manifest); }}},
      {"train-cnn", {&cnn.c.out, [&] { run_train_cnn(cnn, manifest); }}},
      {"evaluate", {&ev.c.out, [&] { run_evaluate(ev, manifest); }}},
      {"sweep", {&sw.c.out, [&] { run_sweep(sw, manifest); }}},
      {"report", {&rep.c.out, [&] { run_report(rep, manifest); }}},
  };
  try {
    const auto& [out, fn] = table.at(name);
    fn();
    finish(manifest, *out);
    return 0;
  } catch (const ValidationError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  } catch (const io::Json::exception& ex) {
    std::cerr << "error: malformed JSON input: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "runtime failure: " << ex.what() << "\n";
    return 2;
  }
}

}  // namespace impairdetect::cli
