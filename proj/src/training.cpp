#include "impairdetect/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "impairdetect/metrics.hpp"
#include "impairdetect/rng.hpp"

namespace impairdetect::nn {

namespace {

io::Json tower_json(const TowerSpec& t) {
  return {{"channels", t.channels}, {"kernel", t.kernel}, {"stride", t.stride}};
}

TowerSpec tower_from_json(const io::Json& j, TowerSpec t) {
  t.channels = j.value("channels", t.channels);
  t.kernel = j.value("kernel", t.kernel);
  t.stride = j.value("stride", t.stride);
  return t;
}

io::Json arch_json(const CnnArch& a) {
  return {{"use_arousal", a.use_arousal},       {"use_accel", a.use_accel},
          {"arousal_length", a.arousal_length}, {"accel_length", a.accel_length},
          {"arousal_tower", tower_json(a.arousal_tower)}, {"accel_tower", tower_json(a.accel_tower)},
          {"hidden", a.hidden},                 {"dropout", a.dropout},
          {"outputs", a.outputs}};
}

CnnArch arch_from_json(const io::Json& j) {
  CnnArch a;
  a.use_arousal = j.value("use_arousal", a.use_arousal);
  a.use_accel = j.value("use_accel", a.use_accel);
  a.arousal_length = j.value("arousal_length", a.arousal_length);
  a.accel_length = j.value("accel_length", a.accel_length);
  if (j.contains("arousal_tower")) a.arousal_tower = tower_from_json(j.at("arousal_tower"), a.arousal_tower);
  if (j.contains("accel_tower")) a.accel_tower = tower_from_json(j.at("accel_tower"), a.accel_tower);
  a.hidden = j.value("hidden", a.hidden);
  a.dropout = j.value("dropout", a.dropout);
  a.outputs = j.value("outputs", a.outputs);
  return a;
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

struct Batch {
  Tensor<float> arousal, accel;
};

Batch assemble(const CnnData& data, const InputNorm& norm, const CnnArch& arch, std::span<const std::size_t> rows) {
  Batch b;
  const std::size_t n = rows.size();
  if (arch.use_arousal) {
    const std::size_t len = data.arousal_length;
    b.arousal = Tensor<float>({n, 1, len});
    const double inv = 1.0 / norm.arousal_std;
    for (std::size_t i = 0; i < n; ++i) {
      const float* src = data.arousal.data() + rows[i] * len;
      float* dst = b.arousal.ptr() + i * len;
      for (std::size_t k = 0; k < len; ++k) dst[k] = static_cast<float>((src[k] - norm.arousal_mean) * inv);
    }
  }
  if (arch.use_accel) {
    const std::size_t len = data.accel_length;
    b.accel = Tensor<float>({n, 1, len});
    const double inv = 1.0 / norm.accel_std;
    for (std::size_t i = 0; i < n; ++i) {
      const float* src = data.accel.data() + rows[i] * len;
      float* dst = b.accel.ptr() + i * len;
      for (std::size_t k = 0; k < len; ++k) dst[k] = static_cast<float>((src[k] - norm.accel_mean) * inv);
    }
  }
  return b;
}

std::vector<double> balanced_weights(const CnnData& data, std::span<const std::size_t> rows, Task task) {
  const std::size_t k = is_binary(task) ? 2 : 3;
  std::vector<double> counts(k, 0.0);
  for (auto r : rows) {
    const double y = data.targets[r];
    const std::size_t c = is_binary(task) ? (y > 0.5 ? 1 : 0) : static_cast<std::size_t>(y) - 1;
    counts.at(c) += 1.0;
  }
  std::vector<double> w(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0.0) throw ValidationError("train: training rows lack class " + std::to_string(c));
    w[c] = static_cast<double>(rows.size()) / (static_cast<double>(k) * counts[c]);
  }
  return w;
}

LossResult<float> task_loss(const Tensor<float>& out, std::span<const double> targets, Task task,
                            const std::vector<double>& cw) {
  if (is_binary(task)) return weighted_bce_with_logits(out, targets, {cw.at(0), cw.at(1)});
  if (task == Task::phase_categorical) {
    std::vector<int> cls(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) cls[i] = static_cast<int>(targets[i]) - 1;
    return cross_entropy(out, std::span<const int>(cls), std::span<const double>(cw));
  }
  return smooth_l1(out, targets, 1.0);
}

std::vector<std::vector<double>> to_outputs(const Tensor<float>& z, Task task) {
  const std::size_t n = z.dim(0), k = z.dim(1);
  std::vector<std::vector<double>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = z.ptr() + i * k;
    if (is_binary(task)) {
      out[i] = {sigmoid(row[0])};
    } else if (task == Task::phase_categorical) {
      double mx = row[0];
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, static_cast<double>(row[c]));
      double s = 0.0;
      out[i].resize(k);
      for (std::size_t c = 0; c < k; ++c) s += out[i][c] = std::exp(row[c] - mx);
      for (auto& p : out[i]) p /= s;
    } else {
      out[i] = {static_cast<double>(row[0])};
    }
  }
  return out;
}

constexpr std::size_t kEvalBatch = 128;

struct EvalPass {
  double loss = 0.0;
  std::vector<std::vector<double>> outputs;
};

EvalPass evaluate(TwoTowerCnn<float>& net, const CnnData& data, const InputNorm& norm,
                  std::span<const std::size_t> rows, Task task, const std::vector<double>& cw) {
  EvalPass pass;
  for (std::size_t s = 0; s < rows.size(); s += kEvalBatch) {
    const auto chunk = rows.subspan(s, std::min(kEvalBatch, rows.size() - s));
    const Batch b = assemble(data, norm, net.arch(), chunk);
    const Tensor<float> z = net.forward(b.arousal, b.accel, false);
    std::vector<double> t(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) t[i] = data.targets[chunk[i]];
    pass.loss += task_loss(z, t, task, cw).loss * static_cast<double>(chunk.size());
    auto o = to_outputs(z, task);
    pass.outputs.insert(pass.outputs.end(), std::make_move_iterator(o.begin()), std::make_move_iterator(o.end()));
  }
  pass.loss /= static_cast<double>(rows.size());
  return pass;
}

/// NaN when undefined (single-class validation).
double validation_metric(const EvalPass& pass, const CnnData& data, std::span<const std::size_t> rows, Task task) {
  if (is_binary(task)) {
    std::vector<double> s(rows.size());
    std::vector<int> y(rows.size());
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      s[i] = pass.outputs[i][0];
      y[i] = data.targets[rows[i]] > 0.5 ? 1 : 0;
      (y[i] ? pos : neg) = true;
    }
    if (!pos || !neg) return std::numeric_limits<double>::quiet_NaN();
    return auroc(s, y);
  }
  if (task == Task::phase_categorical) {
    std::vector<int> cls(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) cls[i] = static_cast<int>(data.targets[rows[i]]);
    std::vector<int> distinct(cls);
    std::sort(distinct.begin(), distinct.end());
    if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    return macro_ovr_auroc(pass.outputs, cls);
  }
  return -pass.loss;
}

void put_le32(std::string& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

float get_le32(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace

std::size_t output_count(Task task) { return task == Task::phase_categorical ? 3 : 1; }

io::Json TrainConfig::to_json() const {
  return {{"optimizer",
           {{"name", "adamw"},
            {"lr", optimizer.lr},
            {"betas", {optimizer.beta1, optimizer.beta2}},
            {"eps", optimizer.eps},
            {"weight_decay", optimizer.weight_decay}}},
          {"scheduler",
           {{"name", "reduce_on_plateau"},
            {"mode", "max"},
            {"factor", plateau_factor},
            {"patience", plateau_patience},
            {"threshold", plateau_threshold}}},
          {"early_stopping", {{"patience", early_stop_patience}, {"max_epochs", max_epochs}}},
          {"batch_size", batch_size},
          {"seed", seed},
          {"task", std::string(to_string(task))},
          {"loss", is_binary(task) ? "weighted_bce" : task == Task::phase_categorical ? "cross_entropy" : "smooth_l1"},
          {"class_weights", class_weights},
          {"arch", arch_json(arch)}};
}

TrainConfig TrainConfig::from_json(const io::Json& j) {
  TrainConfig c;
  try {
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.lr = o.value("lr", c.optimizer.lr);
      if (o.contains("betas")) {
        c.optimizer.beta1 = o.at("betas").at(0).get<double>();
        c.optimizer.beta2 = o.at("betas").at(1).get<double>();
      }
      c.optimizer.eps = o.value("eps", c.optimizer.eps);
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    }
    if (j.contains("scheduler")) {
      const auto& s = j.at("scheduler");
      c.plateau_factor = s.value("factor", c.plateau_factor);
      c.plateau_patience = s.value("patience", c.plateau_patience);
      c.plateau_threshold = s.value("threshold", c.plateau_threshold);
    }
    if (j.contains("early_stopping")) {
      const auto& e = j.at("early_stopping");
      c.early_stop_patience = e.value("patience", c.early_stop_patience);
      c.max_epochs = e.value("max_epochs", c.max_epochs);
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.class_weights = j.value("class_weights", c.class_weights);
    if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.arch.outputs = output_count(c.task);
  if (c.batch_size < 2) throw ValidationError("train config: batch_size must be at least 2");
  if (c.max_epochs < 1) throw ValidationError("train config: max_epochs must be at least 1");
  if (c.optimizer.lr < 0) throw ValidationError("train config: lr must be non-negative");
  return c;
}

CnnData make_cnn_data(std::span<const WindowSegment> windows, Task task) {
  CnnData d;
  if (windows.empty()) return d;
  d.arousal_length = windows.front().arousal_grid.size();
  d.accel_length = windows.front().accel_grid.size();
  d.arousal.reserve(windows.size() * d.arousal_length);
  d.accel.reserve(windows.size() * d.accel_length);
  for (const auto& w : windows) {
    if (w.arousal_grid.size() != d.arousal_length || w.accel_grid.size() != d.accel_length) {
      throw ValidationError("cnn data: windows differ in length");
    }
    for (double v : w.arousal_grid) d.arousal.push_back(static_cast<float>(v));
    for (double v : w.accel_grid) d.accel.push_back(static_cast<float>(v));
    d.targets.push_back(w.labels.value(task));
    d.refs.push_back(window_ref(w));
  }
  return d;
}

InputNorm InputNorm::fit(const CnnData& data, std::span<const std::size_t> rows) {
  InputNorm n;
  auto fit_one = [&](const std::vector<float>& v, std::size_t len, double& mean, double& sd) {
    if (v.empty() || rows.empty()) return;
    double s = 0.0, ss = 0.0;
    for (auto r : rows) {
      for (std::size_t k = 0; k < len; ++k) s += v[r * len + k];
    }
    const double count = static_cast<double>(rows.size() * len);
    mean = s / count;
    for (auto r : rows) {
      for (std::size_t k = 0; k < len; ++k) ss += (v[r * len + k] - mean) * (v[r * len + k] - mean);
    }
    sd = std::sqrt(ss / count);
    if (!(sd > 0)) sd = 1.0;
  };
  fit_one(data.arousal, data.arousal_length, n.arousal_mean, n.arousal_std);
  fit_one(data.accel, data.accel_length, n.accel_mean, n.accel_std);
  return n;
}

io::Json InputNorm::to_json() const {
  return {{"arousal", {{"mean", arousal_mean}, {"std", arousal_std}}}, {"accel", {{"mean", accel_mean}, {"std", accel_std}}}};
}

InputNorm InputNorm::from_json(const io::Json& j) {
  InputNorm n;
  n.arousal_mean = j.at("arousal").at("mean").get<double>();
  n.arousal_std = j.at("arousal").at("std").get<double>();
  n.accel_mean = j.at("accel").at("mean").get<double>();
  n.accel_std = j.at("accel").at("std").get<double>();
  return n;
}

io::Json TrainHistory::to_json() const {
  io::Json ep = io::Json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"val_loss", e.val_loss},
                  {"val_metric", e.val_metric},
                  {"lr", e.lr},
                  {"improved", e.improved}});
  }
  return {{"metric", metric}, {"epochs", ep},           {"best_epoch", best_epoch},
          {"best_metric", best_metric}, {"stopped_early", stopped_early}, {"warnings", warnings}};
}

TrainHistory TrainHistory::from_json(const io::Json& j) {
  TrainHistory h;
  h.metric = j.at("metric").get<std::string>();
  for (const auto& e : j.at("epochs")) {
    h.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("val_loss").get<double>(),
                        e.at("val_metric").get<double>(), e.at("lr").get<double>(), e.at("improved").get<bool>()});
  }
  h.best_epoch = j.at("best_epoch").get<int>();
  h.best_metric = j.at("best_metric").get<double>();
  h.stopped_early = j.value("stopped_early", false);
  h.warnings = j.value("warnings", std::vector<std::string>{});
  return h;
}

CnnModel train_cnn(const CnnData& data, std::span<const std::size_t> train_rows,
                   std::span<const std::size_t> val_rows, const TrainConfig& config) {
  if (train_rows.size() < 2) throw ValidationError("train: need at least 2 training windows");
  if (val_rows.empty()) throw ValidationError("train: validation set is empty");
  TrainConfig cfg = config;
  cfg.arch.outputs = output_count(cfg.task);
  cfg.arch.arousal_length = data.arousal_length;
  cfg.arch.accel_length = data.accel_length;
  for (auto r : train_rows) {
    if (std::isnan(data.targets.at(r))) throw ValidationError("train: missing target");
  }

  std::vector<double> cw = cfg.class_weights;
  if (cfg.task != Task::bac_regression && cw.empty()) cw = balanced_weights(data, train_rows, cfg.task);
  if (cfg.task != Task::bac_regression && cw.size() != (is_binary(cfg.task) ? 2u : 3u)) {
    throw ValidationError("train: class weight count does not match the task");
  }

  CnnModel model;
  model.config = cfg;
  model.config.class_weights = cw;
  model.norm = InputNorm::fit(data, train_rows);
  if (!cfg.arch.use_arousal) model.norm.arousal_mean = 0.0, model.norm.arousal_std = 1.0;
  if (!cfg.arch.use_accel) model.norm.accel_mean = 0.0, model.norm.accel_std = 1.0;

  TwoTowerCnn<float> net(cfg.arch, cfg.seed);
  AdamW<float> opt(net.params(), cfg.optimizer);
  PlateauScheduler plateau(cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_threshold);
  Rng order_rng(derive_seed(cfg.seed, {0x5a1f}));

  auto& hist = model.history;
  hist.metric = is_binary(cfg.task) ? "val_auroc" : cfg.task == Task::phase_categorical ? "val_macro_auroc"
                                                                                         : "neg_val_loss";
  double best = -std::numeric_limits<double>::infinity();
  bool fallback = cfg.task == Task::bac_regression;
  int bad = 0;
  model.state = net.state();

  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - s);
      if (n < 2) break;  // batch norm cannot train on a single window
      const std::span<const std::size_t> rows(order.data() + s, n);
      const Batch b = assemble(data, model.norm, cfg.arch, rows);
      std::vector<double> t(n);
      for (std::size_t i = 0; i < n; ++i) t[i] = data.targets[rows[i]];
      net.zero_grad();
      const Tensor<float> z = net.forward(b.arousal, b.accel, true);
      const auto loss = task_loss(z, t, cfg.task, cw);
      net.backward(loss.grad);
      opt.step();
      loss_sum += loss.loss * static_cast<double>(n);
      seen += n;
    }

    const EvalPass pass = evaluate(net, data, model.norm, val_rows, cfg.task, cw);
    double metric = fallback ? -pass.loss : validation_metric(pass, data, val_rows, cfg.task);
    if (std::isnan(metric)) {
      fallback = true;
      hist.metric = "neg_val_loss";
      hist.warnings.push_back("validation set has a single class; early stopping on validation loss");
      metric = -pass.loss;
      best = -std::numeric_limits<double>::infinity();
      plateau = PlateauScheduler(cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_threshold);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.val_loss = pass.loss;
    rec.val_metric = metric;
    rec.lr = opt.lr();
    rec.improved = metric > best;
    if (rec.improved) {
      best = metric;
      hist.best_epoch = epoch;
      hist.best_metric = metric;
      model.state = net.state();
      bad = 0;
    } else {
      ++bad;
    }
    hist.epochs.push_back(rec);
    opt.set_lr(plateau.step(metric, opt.lr()));
    if (bad >= cfg.early_stop_patience) {
      hist.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  return model;
}

std::vector<std::vector<double>> predict_cnn(const CnnModel& model, const CnnData& data,
                                             std::span<const std::size_t> rows) {
  CnnArch arch = model.config.arch;
  if (arch.use_arousal && data.arousal_length != arch.arousal_length) {
    throw ValidationError("predict: arousal window length does not match the model");
  }
  if (arch.use_accel && data.accel_length != arch.accel_length) {
    throw ValidationError("predict: accel window length does not match the model");
  }
  TwoTowerCnn<float> net(arch, model.config.seed);
  net.load_state(model.state);
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (std::size_t s = 0; s < rows.size(); s += kEvalBatch) {
    const auto chunk = rows.subspan(s, std::min(kEvalBatch, rows.size() - s));
    const Batch b = assemble(data, model.norm, arch, chunk);
    auto o = to_outputs(net.forward(b.arousal, b.accel, false), model.config.task);
    out.insert(out.end(), std::make_move_iterator(o.begin()), std::make_move_iterator(o.end()));
  }
  return out;
}

void CnnModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  TwoTowerCnn<float> net(config.arch, config.seed);
  const auto layout = net.state_layout();
  std::size_t total = 0;
  io::Json lj = io::Json::array();
  for (const auto& [name, shape] : layout) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    total += n;
    lj.push_back({{"name", name}, {"shape", shape}});
  }
  if (total != state.size()) throw ValidationError("checkpoint: state does not match the architecture");
  std::string bytes;
  bytes.reserve(state.size() * 4);
  for (float v : state) put_le32(bytes, v);
  io::write_text(dir / "weights.bin", bytes);
  io::Json m = {{"format", "impairdetect-cnn-checkpoint"},
                {"version", 1},
                {"dtype", "float32-le"},
                {"values", state.size()},
                {"weights_sha256", io::sha256_hex(bytes)},
                {"layout", lj},
                {"config", config.to_json()},
                {"seed", config.seed},
                {"norm", norm.to_json()},
                {"history", history.to_json()}};
  io::write_json(dir / "manifest.json", m);
}

CnnModel CnnModel::load(const std::filesystem::path& dir) {
  const io::Json m = io::read_json(dir / "manifest.json");
  CnnModel model;
  model.config = TrainConfig::from_json(m.at("config"));
  model.config.arch = arch_from_json(m.at("config").at("arch"));
  model.norm = InputNorm::from_json(m.at("norm"));
  model.history = TrainHistory::from_json(m.at("history"));
  const std::string bytes = io::read_text(dir / "weights.bin");
  if (io::sha256_hex(bytes) != m.at("weights_sha256").get<std::string>()) {
    throw ValidationError("checkpoint: weights.bin hash does not match its manifest");
  }
  const auto count = m.at("values").get<std::size_t>();
  if (bytes.size() != count * 4) throw ValidationError("checkpoint: weights.bin has the wrong size");
  model.state.resize(count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < count; ++i) model.state[i] = get_le32(p + 4 * i);
  TwoTowerCnn<float> net(model.config.arch, model.config.seed);
  const auto layout = net.state_layout();
  const auto& lj = m.at("layout");
  if (lj.size() != layout.size()) throw ValidationError("checkpoint: layer layout does not match the architecture");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (lj[i].at("name").get<std::string>() != layout[i].first ||
        lj[i].at("shape").get<std::vector<std::size_t>>() != layout[i].second) {
      throw ValidationError("checkpoint: layer " + layout[i].first + " does not match the architecture");
    }
  }
  net.load_state(model.state);
  return model;
}

}  // namespace impairdetect::nn
