#include "impairdetect/linear_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "impairdetect/stats.hpp"

namespace impairdetect {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}
double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

void check_inputs(const Eigen::MatrixXd& x, std::span<const int> y) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ValidationError("lasso: X rows and labels differ");
  if (!x.allFinite()) throw ValidationError("lasso: non-finite design matrix entry");
  for (int v : y) {
    if (v != 0 && v != 1) throw ValidationError("lasso: labels must be 0 or 1");
  }
}

std::vector<double> sample_weights(std::span<const int> y, const std::array<double, 2>& cw) {
  std::vector<double> c(y.size());
  const double n = static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) c[i] = cw[static_cast<std::size_t>(y[i])] / n;
  return c;
}

class Solver {
 public:
  Solver(const Eigen::MatrixXd& x, std::span<const int> y, const std::array<double, 2>& cw, double lambda)
      : x_(x), y_(y.begin(), y.end()), c_(sample_weights(y, cw)), lambda_(lambda) {
    const auto n = x.rows(), p = x.cols();
    w_ = Eigen::VectorXd::Zero(p);
    z_ = Eigen::VectorXd::Zero(n);
    bound_.resize(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) acc += c_[static_cast<std::size_t>(i)] * x(i, j) * x(i, j);
      bound_[static_cast<std::size_t>(j)] = 0.25 * acc;
    }
    bias_bound_ = 0.0;
    for (double ci : c_) bias_bound_ += 0.25 * ci;
    p_.resize(n);
    zn_.resize(n);
    pn_.resize(n);
    loss_ = loss_at(z_, p_);
  }

  double objective() const { return loss_ + lambda_ * w_.lpNorm<1>(); }

  void update_bias() {
    double g = 0.0, h = 0.0;
    for (Eigen::Index i = 0; i < p_.size(); ++i) {
      const double ci = c_[static_cast<std::size_t>(i)], pi = p_(i);
      g += ci * (pi - y_[static_cast<std::size_t>(i)]);
      h += ci * pi * (1.0 - pi);
    }
    if (g == 0.0) return;
    auto try_step = [&](double delta) {
      zn_ = z_.array() + delta;
      const double ln = loss_at(zn_, pn_);
      if (ln <= loss_) {
        b_ += delta;
        accept(ln);
        return true;
      }
      return false;
    };
    if (h > 1e-300 && try_step(-g / h)) return;
    try_step(-g / bias_bound_);
  }

  void update(Eigen::Index j) {
    const auto col = x_.col(j);
    double g = 0.0, h = 0.0;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      const double ci = c_[static_cast<std::size_t>(i)], pi = p_(i), xi = col(i);
      g += ci * (pi - y_[static_cast<std::size_t>(i)]) * xi;
      h += ci * pi * (1.0 - pi) * xi * xi;
    }
    const double wj = w_(j);
    if (wj == 0.0 && std::abs(g) <= lambda_) return;
    const double f_old = loss_ + lambda_ * std::abs(wj);
    auto try_value = [&](double wn) {
      if (wn == wj) return false;
      zn_ = z_ + (wn - wj) * col;
      const double ln = loss_at(zn_, pn_);
      if (ln + lambda_ * std::abs(wn) <= f_old) {
        w_(j) = wn;
        accept(ln);
        return true;
      }
      return false;
    };
    if (h > 1e-300 && try_value(soft_threshold(h * wj - g, lambda_) / h)) return;
    const double hb = bound_[static_cast<std::size_t>(j)];
    if (hb > 0.0) try_value(soft_threshold(hb * wj - g, lambda_) / hb);
  }

  /// One proximal Newton step: coordinate descent on the weighted quadratic
  /// model of the loss, then backtracking on the true objective. Returns false
  /// when no step length lowers the objective.
  bool newton_step(double tol) {
    const auto n = x_.rows(), p = x_.cols();
    Eigen::VectorXd h(n), r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      h(i) = std::max(c_[k] * p_(i) * (1.0 - p_(i)), 1e-12 * c_[k]);
      r(i) = c_[k] * (p_(i) - y_[k]);  // gradient of the model in z, updated as dz moves
    }
    Eigen::VectorXd curv(p);
    for (Eigen::Index j = 0; j < p; ++j) curv(j) = h.dot(x_.col(j).cwiseAbs2());
    const double hsum = h.sum();
    Eigen::VectorXd wn = w_;
    double db = 0.0;
    auto pass = [&](bool active_only) {
      double moved = 0.0;
      const double d0 = -r.sum() / hsum;
      if (d0 != 0.0) {
        db += d0;
        r += d0 * h;
        moved = std::max(moved, std::abs(d0) * hsum);
      }
      for (Eigen::Index j = 0; j < p; ++j) {
        if (active_only && wn(j) == 0.0) continue;
        const double hj = curv(j);
        if (hj <= 0.0) continue;
        const auto col = x_.col(j);
        const double gj = col.dot(r);
        const double v = soft_threshold(hj * wn(j) - gj, lambda_) / hj;
        const double d = v - wn(j);
        if (d == 0.0) continue;
        wn(j) = v;
        r.noalias() += d * col.cwiseProduct(h);
        moved = std::max(moved, std::abs(d) * hj);
      }
      return moved;
    };
    const double inner_tol = 0.1 * tol;
    for (int full = 0; full < 100; ++full) {
      if (pass(false) <= inner_tol) break;
      for (int a = 0; a < 1000 && pass(true) > inner_tol; ++a) {
      }
    }
    const Eigen::VectorXd dw = wn - w_;
    const Eigen::VectorXd dz = x_ * dw;
    const double f_old = objective();
    double gd = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      gd += c_[k] * (p_(i) - y_[k]) * (dz(i) + db);
    }
    const double decrease = gd + lambda_ * ((w_ + dw).lpNorm<1>() - w_.lpNorm<1>());
    double t = 1.0;
    for (int k = 0; k < 40; ++k, t *= 0.5) {
      zn_ = z_ + t * (dz.array() + db).matrix();
      const Eigen::VectorXd wt = w_ + t * dw;
      const double ln = loss_at(zn_, pn_);
      const double f = ln + lambda_ * wt.lpNorm<1>();
      if (f <= f_old + 1e-4 * t * std::min(decrease, 0.0)) {
        if (!(f < f_old)) return false;
        w_ = wt;
        b_ += t * db;
        accept(ln);
        return true;
      }
    }
    return false;
  }

  /// Gradient of the smooth part with respect to every weight, and the bias.
  std::pair<Eigen::VectorXd, double> gradient() const {
    Eigen::VectorXd r(z_.size());
    double gb = 0.0;
    for (Eigen::Index i = 0; i < z_.size(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      r(i) = c_[k] * (p_(i) - y_[k]);
      gb += r(i);
    }
    return {x_.transpose() * r, gb};
  }

  double violation(const std::vector<Eigen::Index>* subset) const {
    const auto [g, gb] = gradient();
    double v = std::abs(gb);
    auto one = [&](Eigen::Index j) {
      if (w_(j) == 0.0) return std::max(0.0, std::abs(g(j)) - lambda_);
      return std::abs(g(j) + lambda_ * (w_(j) > 0 ? 1.0 : -1.0));
    };
    if (subset) {
      for (auto j : *subset) v = std::max(v, one(j));
    } else {
      for (Eigen::Index j = 0; j < w_.size(); ++j) v = std::max(v, one(j));
    }
    return v;
  }

  const Eigen::VectorXd& weights() const { return w_; }
  double bias() const { return b_; }

 private:
  /// Loss at z; also fills the probabilities so an accepted step needs no recomputation.
  double loss_at(const Eigen::VectorXd& z, Eigen::VectorXd& prob) const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double zi = z(i), e = std::exp(-std::abs(zi));
      acc += c_[k] * (std::max(zi, 0.0) + std::log1p(e) - y_[k] * zi);
      prob(i) = zi >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
    }
    return acc;
  }

  void accept(double loss) {
    z_.swap(zn_);
    p_.swap(pn_);
    loss_ = loss;
  }

  const Eigen::MatrixXd& x_;
  std::vector<double> y_;
  std::vector<double> c_;
  double lambda_;
  Eigen::VectorXd w_, z_, p_, zn_, pn_;
  double b_ = 0.0;
  double loss_ = 0.0;
  std::vector<double> bound_;
  double bias_bound_ = 0.0;
};

}  // namespace

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = rows.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd m(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(r.size()) != p) throw ValidationError("to_matrix: ragged rows");
    for (Eigen::Index j = 0; j < p; ++j) m(i, j) = r[static_cast<std::size_t>(j)];
  }
  return m;
}

std::array<double, 2> balanced_class_weights(std::span<const int> y) {
  std::array<double, 2> counts{0, 0};
  for (int v : y) counts[v == 1 ? 1 : 0] += 1.0;
  if (counts[0] == 0 || counts[1] == 0) throw ValidationError("lasso: labels contain a single class");
  const double n = static_cast<double>(y.size());
  return {n / (2.0 * counts[0]), n / (2.0 * counts[1])};
}

double lambda_max(const Eigen::MatrixXd& x, std::span<const int> y, const std::array<double, 2>& cw) {
  check_inputs(x, y);
  const auto c = sample_weights(y, cw);
  double sw = 0.0, swy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sw += c[i];
    swy += c[i] * y[i];
  }
  const double p0 = swy / sw;  // sigmoid of the optimal intercept at w = 0
  double best = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double g = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      g += c[k] * (p0 - y[k]) * x(i, j);
    }
    best = std::max(best, std::abs(g));
  }
  return best;
}

double lasso_objective(const LassoLogitModel& m, const Eigen::MatrixXd& x, std::span<const int> y) {
  const auto c = sample_weights(y, m.class_weights);
  double acc = 0.0, l1 = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double z = m.bias;
    for (Eigen::Index j = 0; j < x.cols(); ++j) z += m.weights[static_cast<std::size_t>(j)] * x(i, j);
    const auto k = static_cast<std::size_t>(i);
    acc += c[k] * (softplus(z) - y[k] * z);
  }
  for (double w : m.weights) l1 += std::abs(w);
  return acc + m.lambda * l1;
}

double kkt_residual(const LassoLogitModel& m, const Eigen::MatrixXd& x, std::span<const int> y) {
  const auto c = sample_weights(y, m.class_weights);
  Eigen::VectorXd r(x.rows());
  double gb = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double z = m.bias;
    for (Eigen::Index j = 0; j < x.cols(); ++j) z += m.weights[static_cast<std::size_t>(j)] * x(i, j);
    const auto k = static_cast<std::size_t>(i);
    r(i) = c[k] * (sigmoid(z) - y[k]);
    gb += r(i);
  }
  const Eigen::VectorXd g = x.transpose() * r;
  double v = std::abs(gb);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double w = m.weights[static_cast<std::size_t>(j)];
    v = std::max(v, w == 0.0 ? std::max(0.0, std::abs(g(j)) - m.lambda) : std::abs(g(j) + m.lambda * (w > 0 ? 1 : -1)));
  }
  return v;
}

LassoLogitModel fit_lasso_logit(const Eigen::MatrixXd& x, std::span<const int> y, const LassoConfig& config) {
  check_inputs(x, y);
  LassoLogitModel model;
  const auto balanced = balanced_class_weights(y);  // also rejects single-class labels
  if (config.class_weights.empty()) {
    model.class_weights = balanced;
  } else {
    if (config.class_weights.size() != 2) throw ValidationError("lasso: class_weights needs 2 entries");
    model.class_weights = {config.class_weights[0], config.class_weights[1]};
  }
  model.lambda = std::isnan(config.lambda) ? config.lambda_ratio * lambda_max(x, y, model.class_weights) : config.lambda;
  if (!(model.lambda >= 0.0)) throw ValidationError("lasso: lambda must be >= 0");

  Solver s(x, y, model.class_weights, model.lambda);
  const double target = 0.5 * config.tol;
  const auto p = x.cols();
  int sweeps = 0;
  if (s.violation(nullptr) <= target) model.converged = true;
  while (!model.converged && sweeps < config.max_iter) {
    if (!s.newton_step(config.tol)) {
      // Stalled: one safeguarded cyclic pass.
      s.update_bias();
      for (Eigen::Index j = 0; j < p; ++j) s.update(j);
    }
    ++sweeps;
    model.objective_history.push_back(s.objective());
    if (s.violation(nullptr) <= target) model.converged = true;
  }
  model.iterations = sweeps;
  model.weights.assign(s.weights().data(), s.weights().data() + s.weights().size());
  model.bias = s.bias();
  model.kkt_residual = kkt_residual(model, x, y);
  return model;
}

std::vector<double> predict_proba(const LassoLogitModel& m, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != m.weights.size()) {
    throw ValidationError("predict_proba: column count " + std::to_string(x.cols()) + " does not match model (" +
                          std::to_string(m.weights.size()) + ")");
  }
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double z = m.bias;
    for (Eigen::Index j = 0; j < x.cols(); ++j) z += m.weights[static_cast<std::size_t>(j)] * x(i, j);
    out[static_cast<std::size_t>(i)] = sigmoid(z);
  }
  return out;
}

std::string LassoLogitModel::column_metadata_hash() const {
  std::string s;
  for (const auto& c : columns) s += c.name + "|" + c.family + "\n";
  return io::sha256_hex(s);
}

io::Json LassoLogitModel::to_json() const {
  io::Json j;
  j["weights"] = weights;
  j["bias"] = bias;
  j["lambda"] = lambda;
  j["class_weights"] = {class_weights[0], class_weights[1]};
  j["column_metadata_hash"] = column_metadata_hash();
  j["seed"] = seed;
  j["iterations"] = iterations;
  j["converged"] = converged;
  j["kkt_residual"] = kkt_residual;
  j["columns"] = io::Json::array();
  for (const auto& c : columns) {
    j["columns"].push_back({{"name", c.name}, {"family", c.family}, {"modality", to_string(c.modality)}});
  }
  return j;
}

LassoLogitModel LassoLogitModel::from_json(const io::Json& j) {
  try {
    LassoLogitModel m;
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.lambda = j.at("lambda").get<double>();
    auto cw = j.at("class_weights").get<std::vector<double>>();
    if (cw.size() != 2) throw ValidationError("model: class_weights needs 2 entries");
    m.class_weights = {cw[0], cw[1]};
    m.seed = j.value("seed", std::uint64_t{0});
    m.iterations = j.value("iterations", 0);
    m.converged = j.value("converged", false);
    m.kkt_residual = j.value("kkt_residual", 0.0);
    if (j.contains("columns")) {
      for (const auto& c : j["columns"]) {
        m.columns.push_back({c.at("name").get<std::string>(), c.at("family").get<std::string>(),
                             parse_feature_modality(c.at("modality").get<std::string>())});
      }
      if (m.columns.size() != m.weights.size()) throw ValidationError("model: columns and weights differ in length");
      if (j.contains("column_metadata_hash") && j["column_metadata_hash"].get<std::string>() != m.column_metadata_hash()) {
        throw ValidationError("model: column metadata hash mismatch");
      }
    }
    return m;
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
}

std::vector<FamilyCoefficient> coefficient_family_report(std::span<const LassoLogitModel> models,
                                                         std::span<const FeatureColumn> all_columns,
                                                         const std::string& task) {
  using Key = std::pair<FeatureModality, std::string>;
  std::vector<Key> keys;
  for (const auto& c : all_columns) {
    Key k{c.modality, c.family};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  std::map<Key, std::vector<double>> per_fold;
  for (const auto& m : models) {
    std::map<Key, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < m.columns.size(); ++i) {
      auto& a = acc[{m.columns[i].modality, m.columns[i].family}];
      a.first += std::abs(m.weights[i]);
      ++a.second;
      Key k{m.columns[i].modality, m.columns[i].family};
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    for (const auto& [k, a] : acc) per_fold[k].push_back(a.first / static_cast<double>(a.second));
  }
  std::vector<FamilyCoefficient> out;
  for (const auto& k : keys) {
    FamilyCoefficient f;
    f.task = task;
    f.modality = k.first;
    f.family = k.second;
    auto it = per_fold.find(k);
    if (it == per_fold.end()) {
      f.missing = true;
      f.mean = f.std = std::numeric_limits<double>::quiet_NaN();
    } else {
      f.folds = it->second.size();
      f.mean = stats::mean(it->second);
      f.std = stats::stddev(it->second);
    }
    out.push_back(f);
  }
  return out;
}

}  // namespace impairdetect
