#include "impairdetect/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "impairdetect/rng.hpp"
#include "impairdetect/stats.hpp"

namespace impairdetect {

std::size_t loso_validation_size(std::size_t participants) {
  if (participants < kLosoMinParticipants) {
    throw ValidationError("LOSO needs at least " + std::to_string(kLosoMinParticipants) + " participants, got " +
                          std::to_string(participants));
  }
  const std::size_t remainder = participants - 1;
  std::size_t v = std::min(kLosoValidationSize, std::max<std::size_t>(2, remainder / 5));
  return std::min(v, remainder - 1);
}

LosoPlan make_loso_plan(std::span<const std::string> ids, std::uint64_t seed) {
  std::set<std::string> uniq(ids.begin(), ids.end());
  if (uniq.size() != ids.size()) throw ValidationError("LOSO: duplicate participant ids");
  LosoPlan plan;
  plan.seed = seed;
  plan.validation_size = loso_validation_size(ids.size());
  if (plan.validation_size < kLosoValidationSize) {
    plan.warnings.push_back("cohort of " + std::to_string(ids.size()) + " participants: validation size " +
                            std::to_string(plan.validation_size) + " instead of " +
                            std::to_string(kLosoValidationSize));
  }
  for (std::size_t f = 0; f < ids.size(); ++f) {
    LosoFold fold;
    fold.held_out = ids[f];
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i != f) rest.push_back(ids[i]);
    }
    Rng rng(derive_seed(seed, {0x105, f}));
    rng.shuffle(rest);
    fold.validation.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(plan.validation_size));
    fold.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(plan.validation_size), rest.end());
    std::sort(fold.validation.begin(), fold.validation.end());
    std::sort(fold.train.begin(), fold.train.end());
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

LosoPlan make_loso_plan(const Cohort& cohort, std::uint64_t seed) {
  const auto ids = cohort.ids();
  return make_loso_plan(ids, seed);
}

io::Json LosoPlan::to_json() const {
  io::Json j;
  j["seed"] = seed;
  j["validation_size"] = validation_size;
  j["warnings"] = warnings;
  j["folds"] = io::Json::array();
  for (const auto& f : folds) {
    j["folds"].push_back({{"held_out", f.held_out}, {"train", f.train}, {"validation", f.validation}});
  }
  return j;
}

LosoPlan LosoPlan::from_json(const io::Json& j) {
  try {
    LosoPlan p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.validation_size = j.at("validation_size").get<std::size_t>();
    p.warnings = j.value("warnings", std::vector<std::string>{});
    for (const auto& f : j.at("folds")) {
      p.folds.push_back({f.at("held_out").get<std::string>(), f.at("train").get<std::vector<std::string>>(),
                         f.at("validation").get<std::vector<std::string>>()});
    }
    return p;
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("LOSO plan: ") + e.what());
  }
}

namespace {

MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  s.n = v.size();
  if (!v.empty()) {
    s.mean = stats::mean(v);
    s.std = stats::stddev(v);
  }
  return s;
}

std::vector<int> int_labels(std::span<const WindowPrediction> p) {
  std::vector<int> l;
  l.reserve(p.size());
  for (const auto& w : p) l.push_back(static_cast<int>(std::lround(w.label)));
  return l;
}

std::vector<double> scores_of(std::span<const WindowPrediction> p) {
  std::vector<double> s;
  s.reserve(p.size());
  for (const auto& w : p) s.push_back(w.score);
  return s;
}

std::vector<std::vector<double>> probs_of(std::span<const WindowPrediction> p) {
  std::vector<std::vector<double>> s;
  s.reserve(p.size());
  for (const auto& w : p) {
    if (w.class_probs.empty()) throw ValidationError("categorical prediction without class probabilities");
    s.push_back(w.class_probs);
  }
  return s;
}

ScopeMetrics scope_metrics(const std::string& name, std::span<const WindowPrediction> preds, Task task,
                           double ci_level) {
  ScopeMetrics m;
  m.scope = name;
  m.windows = preds.size();
  if (preds.empty()) return m;
  if (task == Task::bac_regression) {
    std::vector<double> pred = scores_of(preds), ref;
    for (const auto& w : preds) ref.push_back(w.label);
    std::vector<int> lab;
    for (double r : ref) lab.push_back(r > 0.05 ? 1 : 0);
    m.positives = static_cast<std::size_t>(std::count(lab.begin(), lab.end(), 1));
    try {
      m.regression = regression_eval(pred, ref);
    } catch (const ValidationError&) {
      // zero-variance reference or prediction: Pearson undefined
      RegressionMetrics r;
      double acc = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - ref[i]);
      r.mae = acc / static_cast<double>(pred.size());
      r.pearson = r.auroc = std::numeric_limits<double>::quiet_NaN();
      m.regression = r;
    }
    if (m.positives > 0 && m.positives < lab.size()) {
      m.defined = true;
      m.auroc = auroc(pred, lab);
      m.auprc = auprc(pred, lab);
      m.random_auprc = prevalence(lab);
    }
    return m;
  }
  const auto labels = int_labels(preds);
  if (task == Task::phase_categorical) {
    const auto probs = probs_of(preds);
    m.positives = preds.size();
    std::set<int> classes(labels.begin(), labels.end());
    if (classes.size() >= 2) {
      m.defined = true;
      m.auroc = macro_ovr_auroc(probs, labels);
      m.auprc = macro_ovr_auprc(probs, labels);
      m.random_auprc = macro_ovr_prevalence(labels, static_cast<int>(probs[0].size()));
    }
    return m;
  }
  const auto scores = scores_of(preds);
  m.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  m.random_auprc = prevalence(labels);
  if (m.positives == 0 || m.positives == labels.size()) return m;
  m.defined = true;
  m.auroc = auroc(scores, labels);
  m.auprc = auprc(scores, labels);
  if (m.positives >= 2 && labels.size() - m.positives >= 2) m.ci = delong_ci(scores, labels, ci_level);
  m.roc = roc_curve(scores, labels);
  m.pr = pr_curve(scores, labels);
  return m;
}

}  // namespace

EvalReport aggregate(std::span<const WindowPrediction> predictions, Task task, const std::string& model,
                     double ci_level) {
  if (predictions.empty()) throw ValidationError("aggregate: empty scope");
  EvalReport r;
  r.model = model;
  r.task = task;

  std::map<std::string, std::vector<WindowPrediction>> by_participant;
  std::vector<std::string> order;
  for (const auto& p : predictions) {
    auto [it, inserted] = by_participant.try_emplace(p.participant_id);
    if (inserted) order.push_back(p.participant_id);
    it->second.push_back(p);
  }
  std::vector<double> aurocs, auprcs, prevs;
  if (task != Task::bac_regression) {
    for (const auto& id : order) {
      const auto& ps = by_participant[id];
      const auto labels = int_labels(ps);
      std::set<int> classes(labels.begin(), labels.end());
      if (classes.size() < 2) {
        r.excluded.push_back(id);
        continue;
      }
      ParticipantMetrics pm;
      pm.participant_id = id;
      pm.group = ps.front().group;
      pm.windows = ps.size();
      if (task == Task::phase_categorical) {
        const auto probs = probs_of(ps);
        pm.auroc = macro_ovr_auroc(probs, labels);
        pm.auprc = macro_ovr_auprc(probs, labels);
        pm.prevalence = macro_ovr_prevalence(labels, static_cast<int>(probs[0].size()));
      } else {
        const auto scores = scores_of(ps);
        pm.auroc = auroc(scores, labels);
        pm.auprc = auprc(scores, labels);
        pm.prevalence = prevalence(labels);
      }
      aurocs.push_back(pm.auroc);
      auprcs.push_back(pm.auprc);
      prevs.push_back(pm.prevalence);
      r.participants.push_back(pm);
    }
  }
  r.macro_auroc = summarize(aurocs);
  r.macro_auprc = summarize(auprcs);
  r.macro_random_auprc = summarize(prevs);

  std::vector<WindowPrediction> treatment;
  for (const auto& p : predictions) {
    if (p.group == Group::treatment) treatment.push_back(p);
  }
  r.pooled_treatment = scope_metrics("treatment", treatment, task, ci_level);
  r.pooled_all = scope_metrics("all", predictions, task, ci_level);
  return r;
}

namespace {

io::Json num(double v) { return std::isfinite(v) ? io::Json(v) : io::Json(nullptr); }
double num_from(const io::Json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

io::Json summary_json(const MetricSummary& s) { return {{"mean", num(s.mean)}, {"std", num(s.std)}, {"n", s.n}}; }
MetricSummary summary_from(const io::Json& j) {
  return {num_from(j.at("mean")), num_from(j.at("std")), j.at("n").get<std::size_t>()};
}

io::Json scope_json(const ScopeMetrics& s) {
  io::Json j{{"scope", s.scope},           {"windows", s.windows}, {"positives", s.positives},
             {"defined", s.defined},       {"auroc", num(s.auroc)}, {"auprc", num(s.auprc)},
             {"random_auprc", num(s.random_auprc)}};
  if (s.ci) j["delong"] = {{"auc", s.ci->auc}, {"variance", s.ci->variance}, {"low", s.ci->low}, {"high", s.ci->high},
                           {"level", s.ci->level}};
  if (s.regression) {
    j["regression"] = {{"mae", num(s.regression->mae)}, {"pearson", num(s.regression->pearson)},
                       {"auroc_at_0.05", num(s.regression->auroc)}};
  }
  return j;
}

ScopeMetrics scope_from(const io::Json& j) {
  ScopeMetrics s;
  s.scope = j.at("scope").get<std::string>();
  s.windows = j.at("windows").get<std::size_t>();
  s.positives = j.at("positives").get<std::size_t>();
  s.defined = j.at("defined").get<bool>();
  s.auroc = num_from(j.at("auroc"));
  s.auprc = num_from(j.at("auprc"));
  s.random_auprc = num_from(j.at("random_auprc"));
  if (j.contains("delong")) {
    const auto& d = j["delong"];
    s.ci = DelongResult{d.at("auc").get<double>(), d.at("variance").get<double>(), d.at("low").get<double>(),
                        d.at("high").get<double>(), d.at("level").get<double>()};
  }
  if (j.contains("regression")) {
    const auto& g = j["regression"];
    s.regression = RegressionMetrics{num_from(g.at("mae")), num_from(g.at("pearson")), num_from(g.at("auroc_at_0.05"))};
  }
  return s;
}

}  // namespace

io::Json EvalReport::to_json() const {
  io::Json j;
  j["model"] = model;
  j["task"] = to_string(task);
  j["meta"] = meta;
  j["macro"] = {{"auroc", summary_json(macro_auroc)},
                {"auprc", summary_json(macro_auprc)},
                {"random_auprc", summary_json(macro_random_auprc)}};
  j["pooled_treatment"] = scope_json(pooled_treatment);
  j["pooled_all"] = scope_json(pooled_all);
  j["participants"] = io::Json::array();
  for (const auto& p : participants) {
    j["participants"].push_back({{"id", p.participant_id},
                                 {"group", to_string(p.group)},
                                 {"windows", p.windows},
                                 {"auroc", p.auroc},
                                 {"auprc", p.auprc},
                                 {"random_auprc", p.prevalence}});
  }
  j["excluded_from_macro"] = excluded;
  return j;
}

EvalReport EvalReport::from_json(const io::Json& j) {
  try {
    EvalReport r;
    r.model = j.at("model").get<std::string>();
    r.task = parse_task(j.at("task").get<std::string>());
    r.meta = j.value("meta", io::Json::object());
    r.macro_auroc = summary_from(j.at("macro").at("auroc"));
    r.macro_auprc = summary_from(j.at("macro").at("auprc"));
    r.macro_random_auprc = summary_from(j.at("macro").at("random_auprc"));
    r.pooled_treatment = scope_from(j.at("pooled_treatment"));
    r.pooled_all = scope_from(j.at("pooled_all"));
    for (const auto& p : j.at("participants")) {
      r.participants.push_back({p.at("id").get<std::string>(), parse_group(p.at("group").get<std::string>()),
                                p.at("windows").get<std::size_t>(), p.at("auroc").get<double>(),
                                p.at("auprc").get<double>(), p.at("random_auprc").get<double>()});
    }
    r.excluded = j.value("excluded_from_macro", std::vector<std::string>{});
    return r;
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("report: ") + e.what());
  }
}

void EvalReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  io::write_json(dir / "report.json", to_json());
  io::CsvWriter pp(dir / "per_participant.csv");
  pp.row({"participant", "group", "windows", "auroc", "auprc", "random_auprc"});
  for (const auto& p : participants) {
    pp.row({p.participant_id, std::string(to_string(p.group)), std::to_string(p.windows), io::format_double(p.auroc),
            io::format_double(p.auprc), io::format_double(p.prevalence)});
  }
  pp.close();
  for (const auto* s : {&pooled_treatment, &pooled_all}) {
    if (!s->roc.empty()) {
      io::CsvWriter w(dir / ("roc_" + s->scope + ".csv"));
      w.row({"fpr", "tpr", "threshold"});
      for (const auto& p : s->roc) w.row({io::format_double(p.fpr), io::format_double(p.tpr), io::format_double(p.threshold)});
      w.close();
    }
    if (!s->pr.empty()) {
      io::CsvWriter w(dir / ("pr_" + s->scope + ".csv"));
      w.row({"recall", "precision", "threshold"});
      for (const auto& p : s->pr) {
        w.row({io::format_double(p.recall), io::format_double(p.precision), io::format_double(p.threshold)});
      }
      w.close();
    }
  }
}

CmaResult cma_smooth(std::span<const WindowPrediction> predictions, double bin_s, double first_output_s,
                     double ci_level) {
  if (!(bin_s > 0.0)) throw ValidationError("cma_smooth: bin width must be positive");
  using Key = std::pair<std::string, int>;
  std::map<Key, std::vector<const WindowPrediction*>> segments;
  std::vector<Key> order;
  for (const auto& p : predictions) {
    Key k{p.participant_id, p.phase_index};
    auto [it, inserted] = segments.try_emplace(k);
    if (inserted) order.push_back(k);
    it->second.push_back(&p);
  }
  CmaResult out;
  for (const auto& k : order) {
    auto& seg = segments[k];
    if (seg.empty()) throw ValidationError("cma_smooth: empty segment");
    std::stable_sort(seg.begin(), seg.end(), [](const auto* a, const auto* b) { return a->elapsed_s < b->elapsed_s; });
    double cum = 0.0;
    std::size_t bins = 0;
    std::size_t i = 0;
    while (i < seg.size()) {
      const auto bin = static_cast<long long>(std::floor(seg[i]->elapsed_s / bin_s + 1e-9));
      double acc = 0.0;
      std::size_t j = i;
      while (j < seg.size() && static_cast<long long>(std::floor(seg[j]->elapsed_s / bin_s + 1e-9)) == bin) {
        acc += seg[j]->score;
        ++j;
      }
      cum += acc / static_cast<double>(j - i);
      ++bins;
      WindowPrediction sm = *seg[j - 1];
      sm.elapsed_s = static_cast<double>(bin) * bin_s;
      sm.score = cum / static_cast<double>(bins);
      out.smoothed.push_back(std::move(sm));
      i = j;
    }
  }
  std::vector<double> times;
  for (const auto& s : out.smoothed) {
    if (s.elapsed_s + 1e-9 >= first_output_s) times.push_back(s.elapsed_s);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (double t : times) {
    std::vector<double> sc;
    std::vector<int> lb;
    for (const auto& s : out.smoothed) {
      if (s.elapsed_s <= t + 1e-9) {
        sc.push_back(s.score);
        lb.push_back(static_cast<int>(std::lround(s.label)));
      }
    }
    CmaPoint pt;
    pt.elapsed_s = t;
    pt.windows = sc.size();
    const auto pos = static_cast<std::size_t>(std::count(lb.begin(), lb.end(), 1));
    if (pos > 0 && pos < lb.size()) {
      pt.auroc = auroc(sc, lb);
      if (pos >= 2 && lb.size() - pos >= 2) pt.ci = delong_ci(sc, lb, ci_level);
    }
    out.curve.push_back(pt);
  }
  return out;
}

void write_cma_curve(const CmaResult& cma, const std::filesystem::path& csv_path) {
  io::CsvWriter w(csv_path);
  w.row({"elapsed_s", "windows", "auroc", "ci_low", "ci_high"});
  for (const auto& p : cma.curve) {
    w.row({io::format_double(p.elapsed_s), std::to_string(p.windows), io::format_double(p.auroc),
           p.ci ? io::format_double(p.ci->low) : "", p.ci ? io::format_double(p.ci->high) : ""});
  }
  w.close();
}

void write_predictions(std::span<const WindowPrediction> predictions, const std::filesystem::path& csv_path) {
  io::CsvWriter w(csv_path);
  std::size_t k = 0;
  for (const auto& p : predictions) k = std::max(k, p.class_probs.size());
  std::vector<std::string> header = {"participant", "group", "phase", "start_s", "elapsed_s", "label", "score"};
  for (std::size_t c = 0; c < k; ++c) header.push_back("prob_" + std::to_string(c + 1));
  w.row(header);
  for (const auto& p : predictions) {
    std::vector<std::string> f = {p.participant_id,
                                  std::string(to_string(p.group)),
                                  std::to_string(p.phase_index),
                                  io::format_double(p.start_s),
                                  io::format_double(p.elapsed_s),
                                  io::format_double(p.label),
                                  io::format_double(p.score)};
    for (std::size_t c = 0; c < k; ++c) f.push_back(c < p.class_probs.size() ? io::format_double(p.class_probs[c]) : "");
    w.row(f);
  }
  w.close();
}

std::vector<WindowPrediction> read_predictions(const std::filesystem::path& csv_path) {
  auto csv = io::read_csv(csv_path);
  const auto c_part = csv.column("participant"), c_group = csv.column("group"), c_phase = csv.column("phase"),
             c_start = csv.column("start_s"), c_el = csv.column("elapsed_s"), c_label = csv.column("label"),
             c_score = csv.column("score");
  std::vector<std::size_t> prob_cols;
  for (std::size_t c = 0; c < csv.header.size(); ++c) {
    if (csv.header[c].rfind("prob_", 0) == 0) prob_cols.push_back(c);
  }
  std::vector<WindowPrediction> out;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& f = csv.rows[i];
    try {
      WindowPrediction p;
      p.participant_id = f[c_part];
      p.group = parse_group(f[c_group]);
      p.phase_index = std::stoi(f[c_phase]);
      p.start_s = io::parse_double(f[c_start]);
      p.elapsed_s = io::parse_double(f[c_el]);
      p.label = io::parse_double(f[c_label]);
      p.score = io::parse_double(f[c_score]);
      for (auto c : prob_cols) {
        if (!f[c].empty()) p.class_probs.push_back(io::parse_double(f[c]));
      }
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw IngestError(csv.path, io::CsvTable::file_row(i), e.what());
    }
  }
  return out;
}

}  // namespace impairdetect
