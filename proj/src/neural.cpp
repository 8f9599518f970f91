#include "impairdetect/neural.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "impairdetect/types.hpp"

namespace impairdetect::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

std::size_t product(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (auto v : s) n *= v;
  return n;
}

template <typename T>
Param<T> make_param(std::string name, std::vector<std::size_t> shape, bool decay = true) {
  Param<T> p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.value.assign(product(p.shape), T(0));
  p.grad.assign(p.value.size(), T(0));
  p.decay = decay;
  return p;
}

template <typename T>
void uniform_fill(AlignedVector<T>& v, double bound, Rng& rng) {
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(product(shape), T(0)) {}

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> s, std::vector<T> values) : shape(std::move(s)), data(values.begin(), values.end()) {
  require(data.size() == product(shape), "tensor: data size does not match shape");
}

// Conv1d ---------------------------------------------------------------------

template <typename T>
Conv1d<T>::Conv1d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, std::string name)
    : in_(in), out_(out), k_(k), stride_(stride), pad_(pad) {
  require(in > 0 && out > 0 && k > 0 && stride > 0, "conv1d: sizes must be positive");
  weight = make_param<T>(name + ".weight", {out, in, k});
  bias = make_param<T>(name + ".bias", {out});
}

template <typename T>
void Conv1d<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ * k_));
  uniform_fill(weight.value, bound, rng);
  uniform_fill(bias.value, bound, rng);
}

template <typename T>
std::size_t Conv1d<T>::out_length(std::size_t length) const {
  require(length + 2 * pad_ >= k_, "conv1d: input shorter than kernel");
  return (length + 2 * pad_ - k_) / stride_ + 1;
}

template <typename T>
void Conv1d<T>::valid_range(std::size_t kk, std::size_t length, std::size_t out_len, std::size_t& lo,
                            std::size_t& hi) const {
  // positions o with 0 <= o * stride + kk - pad < length
  lo = kk >= pad_ ? 0 : (pad_ - kk + stride_ - 1) / stride_;
  const std::size_t limit = length + pad_;
  hi = limit > kk ? std::min(out_len, (limit - kk - 1) / stride_ + 1) : 0;
  if (hi < lo) hi = lo;
}

template <typename T>
void Conv1d<T>::im2col(const T* x, std::size_t length, std::size_t out_len, T* col) const {
  for (std::size_t kk = 0; kk < k_; ++kk) {
    std::size_t lo, hi;
    valid_range(kk, length, out_len, lo, hi);
    for (std::size_t ci = 0; ci < in_; ++ci) {
      const T* xc = x + ci * length;
      T* row = col + (ci * k_ + kk) * out_len;
      std::fill(row, row + lo, T(0));
      for (std::size_t o = lo; o < hi; ++o) row[o] = xc[o * stride_ + kk - pad_];
      std::fill(row + hi, row + out_len, T(0));
    }
  }
}

template <typename T>
Tensor<T> Conv1d<T>::forward(const Tensor<T>& x) {
  require(x.rank() == 3 && x.dim(1) == in_, "conv1d: expected input (B, " + std::to_string(in_) + ", L)");
  const std::size_t b = x.dim(0), len = x.dim(2), ol = out_length(len);
  input_ = x;
  Tensor<T> y({b, out_, ol});
  AlignedVector<T> col(in_ * k_ * ol);
  CMapMat<T> w(weight.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_ * k_));
  for (std::size_t n = 0; n < b; ++n) {
    im2col(x.ptr() + n * in_ * len, len, ol, col.data());
    CMapMat<T> c(col.data(), static_cast<Eigen::Index>(in_ * k_), static_cast<Eigen::Index>(ol));
    MapMat<T> out(y.ptr() + n * out_ * ol, static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(ol));
    out.noalias() = w * c;
    for (std::size_t co = 0; co < out_; ++co) out.row(static_cast<Eigen::Index>(co)).array() += bias.value[co];
  }
  return y;
}

template <typename T>
Tensor<T> Conv1d<T>::backward(const Tensor<T>& dy, bool input_grad) {
  const std::size_t b = input_.dim(0), len = input_.dim(2), ol = out_length(len);
  require(dy.rank() == 3 && dy.dim(0) == b && dy.dim(1) == out_ && dy.dim(2) == ol, "conv1d: gradient shape mismatch");
  Tensor<T> dx;
  if (input_grad) dx = Tensor<T>({b, in_, len});
  AlignedVector<T> col(in_ * k_ * ol), dcol(in_ * k_ * ol);
  const auto rows = static_cast<Eigen::Index>(in_ * k_);
  CMapMat<T> w(weight.value.data(), static_cast<Eigen::Index>(out_), rows);
  MapMat<T> dw(weight.grad.data(), static_cast<Eigen::Index>(out_), rows);
  for (std::size_t n = 0; n < b; ++n) {
    im2col(input_.ptr() + n * in_ * len, len, ol, col.data());
    CMapMat<T> c(col.data(), rows, static_cast<Eigen::Index>(ol));
    CMapMat<T> g(dy.ptr() + n * out_ * ol, static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(ol));
    dw.noalias() += g * c.transpose();
    for (std::size_t co = 0; co < out_; ++co) bias.grad[co] += g.row(static_cast<Eigen::Index>(co)).sum();
    if (!input_grad) continue;
    MapMat<T> dc(dcol.data(), rows, static_cast<Eigen::Index>(ol));
    dc.noalias() = w.transpose() * g;
    T* dxn = dx.ptr() + n * in_ * len;
    for (std::size_t kk = 0; kk < k_; ++kk) {
      std::size_t lo, hi;
      valid_range(kk, len, ol, lo, hi);
      for (std::size_t ci = 0; ci < in_; ++ci) {
        const T* row = dcol.data() + (ci * k_ + kk) * ol;
        T* dst = dxn + ci * len;
        for (std::size_t o = lo; o < hi; ++o) dst[o * stride_ + kk - pad_] += row[o];
      }
    }
  }
  return dx;
}

// BatchNorm1d ----------------------------------------------------------------

template <typename T>
BatchNorm1d<T>::BatchNorm1d(std::size_t channels, std::string name, double eps_, double momentum_)
    : eps(eps_), momentum(momentum_), c_(channels) {
  gamma = make_param<T>(name + ".weight", {channels}, true);
  beta = make_param<T>(name + ".bias", {channels}, true);
  std::fill(gamma.value.begin(), gamma.value.end(), T(1));
  running_mean.assign(channels, T(0));
  running_var.assign(channels, T(1));
}

template <typename T>
Tensor<T> BatchNorm1d<T>::forward(const Tensor<T>& x, bool training) {
  require(x.rank() == 3 && x.dim(1) == c_, "batchnorm1d: expected input (B, " + std::to_string(c_) + ", L)");
  const std::size_t b = x.dim(0), len = x.dim(2);
  if (training) require(b >= 2, "batchnorm1d: training mode needs a batch of at least 2");
  last_training_ = training;
  Tensor<T> y(x.shape);
  xhat_.shape = x.shape;
  xhat_.data.resize(x.size());
  inv_std_.assign(c_, T(0));
  const double count = static_cast<double>(b * len);
  const auto n_l = static_cast<Eigen::Index>(len);
  auto row = [&](const Tensor<T>& t, std::size_t n, std::size_t c) {
    return Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(t.ptr() + (n * c_ + c) * len, n_l);
  };
  for (std::size_t c = 0; c < c_; ++c) {
    double mean, var;
    if (training) {
      double s = 0.0;
      for (std::size_t n = 0; n < b; ++n) s += static_cast<double>(row(x, n, c).sum());
      mean = s / count;
      double ss = 0.0;
      const T m = static_cast<T>(mean);
      for (std::size_t n = 0; n < b; ++n) ss += static_cast<double>((row(x, n, c) - m).square().sum());
      var = ss / count;
      const double unbiased = count > 1 ? ss / (count - 1.0) : var;
      running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean);
      running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std_[c] = static_cast<T>(inv);
    const T g = gamma.value[c], bt = beta.value[c], m = static_cast<T>(mean), is = static_cast<T>(inv);
    for (std::size_t n = 0; n < b; ++n) {
      const std::size_t off = (n * c_ + c) * len;
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> xh(xhat_.ptr() + off, n_l), out(y.ptr() + off, n_l);
      xh = (row(x, n, c) - m) * is;
      out = g * xh + bt;
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm1d<T>::backward(const Tensor<T>& dy) {
  require(dy.shape == xhat_.shape, "batchnorm1d: gradient shape mismatch");
  const std::size_t b = dy.dim(0), len = dy.dim(2);
  const auto n_l = static_cast<Eigen::Index>(len);
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  Tensor<T> dx(dy.shape);
  const double count = static_cast<double>(b * len);
  for (std::size_t c = 0; c < c_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
      const std::size_t off = (n * c_ + c) * len;
      Eigen::Map<const Arr> g(dy.ptr() + off, n_l), xh(xhat_.ptr() + off, n_l);
      sum_dy += static_cast<double>(g.sum());
      sum_dy_xhat += static_cast<double>((g * xh).sum());
    }
    gamma.grad[c] += static_cast<T>(sum_dy_xhat);
    beta.grad[c] += static_cast<T>(sum_dy);
    const double k = static_cast<double>(gamma.value[c]) * inv_std_[c];
    for (std::size_t n = 0; n < b; ++n) {
      const std::size_t off = (n * c_ + c) * len;
      Eigen::Map<const Arr> g(dy.ptr() + off, n_l), xh(xhat_.ptr() + off, n_l);
      Eigen::Map<Arr> out(dx.ptr() + off, n_l);
      if (last_training_) {
        const T a = static_cast<T>(k), mdy = static_cast<T>(sum_dy / count), mdx = static_cast<T>(sum_dy_xhat / count);
        out = a * (g - mdy - xh * mdx);
      } else {
        out = static_cast<T>(k) * g;
      }
    }
  }
  return dx;
}

// ReLU, pooling, linear, dropout ----------------------------------------------

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
  out_ = x;
  for (auto& v : out_.data) v = v > T(0) ? v : T(0);
  return out_;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& dy) const {
  require(dy.shape == out_.shape, "relu: gradient shape mismatch");
  Tensor<T> dx(dy.shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] = out_.data[i] > T(0) ? dy.data[i] : T(0);
  return dx;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x) {
  require(x.rank() == 3 && x.dim(2) >= 1, "global_avg_pool: expected (B, C, L) with L >= 1");
  const std::size_t b = x.dim(0), c = x.dim(1);
  length_ = x.dim(2);
  Tensor<T> y({b, c});
  for (std::size_t i = 0; i < b * c; ++i) {
    double s = 0.0;
    for (std::size_t l = 0; l < length_; ++l) s += x.data[i * length_ + l];
    y.data[i] = static_cast<T>(s / static_cast<double>(length_));
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx({dy.dim(0), dy.dim(1), length_});
  const T scale = T(1) / static_cast<T>(length_);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    for (std::size_t l = 0; l < length_; ++l) dx.data[i * length_ + l] = dy.data[i] * scale;
  }
  return dx;
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, std::string name) : in_(in), out_(out) {
  weight = make_param<T>(name + ".weight", {out, in});
  bias = make_param<T>(name + ".bias", {out});
}

template <typename T>
void Linear<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  uniform_fill(weight.value, bound, rng);
  uniform_fill(bias.value, bound, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  require(x.rank() == 2 && x.dim(1) == in_, "linear: expected input (B, " + std::to_string(in_) + ")");
  input_ = x;
  const auto b = static_cast<Eigen::Index>(x.dim(0));
  Tensor<T> y({x.dim(0), out_});
  CMapMat<T> xm(x.ptr(), b, static_cast<Eigen::Index>(in_));
  CMapMat<T> w(weight.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  MapMat<T> ym(y.ptr(), b, static_cast<Eigen::Index>(out_));
  ym.noalias() = xm * w.transpose();
  for (Eigen::Index i = 0; i < b; ++i) {
    for (std::size_t o = 0; o < out_; ++o) ym(i, static_cast<Eigen::Index>(o)) += bias.value[o];
  }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  const auto b = static_cast<Eigen::Index>(input_.dim(0));
  require(dy.rank() == 2 && dy.dim(0) == input_.dim(0) && dy.dim(1) == out_, "linear: gradient shape mismatch");
  CMapMat<T> xm(input_.ptr(), b, static_cast<Eigen::Index>(in_));
  CMapMat<T> g(dy.ptr(), b, static_cast<Eigen::Index>(out_));
  CMapMat<T> w(weight.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  MapMat<T> dw(weight.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  dw.noalias() += g.transpose() * xm;
  for (std::size_t o = 0; o < out_; ++o) bias.grad[o] += g.col(static_cast<Eigen::Index>(o)).sum();
  Tensor<T> dx({input_.dim(0), in_});
  MapMat<T> dxm(dx.ptr(), b, static_cast<Eigen::Index>(in_));
  dxm.noalias() = g * w;
  return dx;
}

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, bool training, Rng& rng) {
  active_ = training && p_ > 0.0;
  if (!active_) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - p_));
  mask_.resize(x.size());
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = rng.uniform() < p_ ? T(0) : scale;
    y.data[i] = x.data[i] * mask_[i];
  }
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& dy) const {
  if (!active_) return dy;
  Tensor<T> dx(dy.shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] = dy.data[i] * mask_[i];
  return dx;
}

// Losses -----------------------------------------------------------------------

namespace {

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  for (auto v : t.data) {
    if (!std::isfinite(static_cast<double>(v))) throw ValidationError(std::string(what) + ": non-finite input");
  }
}

}  // namespace

template <typename T>
LossResult<T> weighted_bce_with_logits(const Tensor<T>& logits, std::span<const double> targets,
                                       const std::array<double, 2>& cw) {
  require(logits.rank() == 2 && logits.dim(1) == 1 && logits.dim(0) == targets.size(), "bce: shape mismatch");
  check_finite(logits, "bce");
  LossResult<T> r;
  r.grad = Tensor<T>(logits.shape);
  const double n = static_cast<double>(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double y = targets[i];
    if (std::isnan(y)) throw ValidationError("bce: NaN target");
    const double z = logits.data[i];
    const double w = cw[y > 0.5 ? 1 : 0];
    const double sp = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    r.loss += w * (sp - y * z) / n;
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    r.grad.data[i] = static_cast<T>(w * (p - y) / n);
  }
  return r;
}

template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, std::span<const double> cw) {
  require(logits.rank() == 2 && logits.dim(0) == targets.size(), "cross_entropy: shape mismatch");
  check_finite(logits, "cross_entropy");
  const std::size_t k = logits.dim(1);
  require(cw.empty() || cw.size() == k, "cross_entropy: class weight count mismatch");
  LossResult<T> r;
  r.grad = Tensor<T>(logits.shape);
  const double n = static_cast<double>(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int t = targets[i];
    require(t >= 0 && static_cast<std::size_t>(t) < k, "cross_entropy: target out of range");
    const T* z = logits.ptr() + i * k;
    double mx = z[0];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, static_cast<double>(z[c]));
    double se = 0.0;
    for (std::size_t c = 0; c < k; ++c) se += std::exp(z[c] - mx);
    const double lse = mx + std::log(se);
    const double w = cw.empty() ? 1.0 : cw[static_cast<std::size_t>(t)];
    r.loss += w * (lse - z[t]) / n;
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(z[c] - lse);
      r.grad.data[i * k + c] = static_cast<T>(w * (p - (static_cast<int>(c) == t ? 1.0 : 0.0)) / n);
    }
  }
  return r;
}

template <typename T>
LossResult<T> smooth_l1(const Tensor<T>& pred, std::span<const double> targets, double delta) {
  require(pred.rank() == 2 && pred.dim(1) == 1 && pred.dim(0) == targets.size(), "smooth_l1: shape mismatch");
  check_finite(pred, "smooth_l1");
  LossResult<T> r;
  r.grad = Tensor<T>(pred.shape);
  const double n = static_cast<double>(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (std::isnan(targets[i])) throw ValidationError("smooth_l1: NaN target");
    const double d = pred.data[i] - targets[i];
    if (std::abs(d) < delta) {
      r.loss += 0.5 * d * d / delta / n;
      r.grad.data[i] = static_cast<T>(d / delta / n);
    } else {
      r.loss += (std::abs(d) - 0.5 * delta) / n;
      r.grad.data[i] = static_cast<T>((d > 0 ? 1.0 : -1.0) / n);
    }
  }
  return r;
}

// Towers and the network --------------------------------------------------------

std::size_t CnnArch::embedding_dim() const {
  std::size_t d = 0;
  if (use_arousal) d += arousal_tower.channels.back();
  if (use_accel) d += accel_tower.channels.back();
  return d;
}

template <typename T>
Tower<T>::Tower(const TowerSpec& spec, const std::string& name) {
  require(!spec.channels.empty(), "tower: needs at least one block");
  std::size_t in = 1;
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    const std::string prefix = name + "." + std::to_string(i);
    convs_.emplace_back(in, spec.channels[i], spec.kernel, spec.stride, (spec.kernel - 1) / 2, prefix + ".conv");
    bns_.emplace_back(spec.channels[i], prefix + ".bn");
    relus_.emplace_back();
    in = spec.channels[i];
  }
}

template <typename T>
void Tower<T>::init(Rng& rng) {
  for (auto& c : convs_) c.init(rng);
}

template <typename T>
Tensor<T> Tower<T>::forward(const Tensor<T>& x, bool training) {
  trace_.clear();
  Tensor<T> h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i].forward(h);
    h = bns_[i].forward(h, training);
    h = relus_[i].forward(h);
    trace_.emplace_back(h.dim(1), h.dim(2));
  }
  return pool_.forward(h);
}

template <typename T>
void Tower<T>::backward(const Tensor<T>& d) {
  Tensor<T> g = pool_.backward(d);
  for (std::size_t i = convs_.size(); i-- > 0;) {
    g = relus_[i].backward(g);
    g = bns_[i].backward(g);
    g = convs_[i].backward(g, i > 0);
  }
}

template <typename T>
std::vector<Param<T>*> Tower<T>::params() {
  std::vector<Param<T>*> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    out.push_back(&convs_[i].weight);
    out.push_back(&convs_[i].bias);
    out.push_back(&bns_[i].gamma);
    out.push_back(&bns_[i].beta);
  }
  return out;
}

template <typename T>
std::vector<BatchNorm1d<T>*> Tower<T>::norms() {
  std::vector<BatchNorm1d<T>*> out;
  for (auto& b : bns_) out.push_back(&b);
  return out;
}

template <typename T>
TwoTowerCnn<T>::TwoTowerCnn(const CnnArch& arch, std::uint64_t seed)
    : arch_(arch),
      fc1_(arch.embedding_dim(), arch.hidden, "head.fc1"),
      fc2_(arch.hidden, arch.outputs, "head.fc2"),
      dropout_(arch.dropout),
      rng_(derive_seed(seed, {0xd20})) {
  require(arch.use_arousal || arch.use_accel, "cnn: at least one tower must be enabled");
  require(arch.outputs >= 1, "cnn: needs at least one output");
  Rng init(derive_seed(seed, {0x1417}));
  if (arch.use_arousal) {
    arousal_ = std::make_unique<Tower<T>>(arch.arousal_tower, "arousal");
    arousal_->init(init);
  }
  if (arch.use_accel) {
    accel_ = std::make_unique<Tower<T>>(arch.accel_tower, "accel");
    accel_->init(init);
  }
  fc1_.init(init);
  fc2_.init(init);
}

template <typename T>
Tensor<T> TwoTowerCnn<T>::forward(const Tensor<T>& arousal, const Tensor<T>& accel, bool training) {
  std::vector<Tensor<T>> parts;
  if (arousal_) {
    require(arousal.rank() == 3 && arousal.dim(1) == 1 && arousal.dim(2) == arch_.arousal_length,
            "cnn: arousal input must be (B, 1, " + std::to_string(arch_.arousal_length) + ")");
    parts.push_back(arousal_->forward(arousal, training));
  }
  if (accel_) {
    require(accel.rank() == 3 && accel.dim(1) == 1 && accel.dim(2) == arch_.accel_length,
            "cnn: accel input must be (B, 1, " + std::to_string(arch_.accel_length) + ")");
    parts.push_back(accel_->forward(accel, training));
  }
  if (parts.size() == 2) require(parts[0].dim(0) == parts[1].dim(0), "cnn: batch sizes differ between towers");
  batch_ = parts[0].dim(0);
  arousal_dim_ = arousal_ ? parts[0].dim(1) : 0;
  Tensor<T> emb({batch_, arch_.embedding_dim()});
  for (std::size_t n = 0; n < batch_; ++n) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t d = p.dim(1);
      std::copy_n(p.ptr() + n * d, d, emb.ptr() + n * emb.dim(1) + off);
      off += d;
    }
  }
  Tensor<T> h = fc1_.forward(emb);
  h = relu_.forward(h);
  h = dropout_.forward(h, training, rng_);
  return fc2_.forward(h);
}

template <typename T>
void TwoTowerCnn<T>::backward(const Tensor<T>& d_logits) {
  Tensor<T> g = fc2_.backward(d_logits);
  g = dropout_.backward(g);
  g = relu_.backward(g);
  g = fc1_.backward(g);
  const std::size_t e = arch_.embedding_dim();
  if (arousal_) {
    Tensor<T> ga({batch_, arousal_dim_});
    for (std::size_t n = 0; n < batch_; ++n) std::copy_n(g.ptr() + n * e, arousal_dim_, ga.ptr() + n * arousal_dim_);
    arousal_->backward(ga);
  }
  if (accel_) {
    const std::size_t d = e - arousal_dim_;
    Tensor<T> gc({batch_, d});
    for (std::size_t n = 0; n < batch_; ++n) std::copy_n(g.ptr() + n * e + arousal_dim_, d, gc.ptr() + n * d);
    accel_->backward(gc);
  }
}

template <typename T>
std::vector<Param<T>*> TwoTowerCnn<T>::params() {
  std::vector<Param<T>*> out;
  if (arousal_) {
    auto p = arousal_->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (accel_) {
    auto p = accel_->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  for (auto* p : {&fc1_.weight, &fc1_.bias, &fc2_.weight, &fc2_.bias}) out.push_back(p);
  return out;
}

template <typename T>
void TwoTowerCnn<T>::zero_grad() {
  for (auto* p : params()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <typename T>
std::vector<std::pair<std::string, std::vector<std::size_t>>> TwoTowerCnn<T>::state_layout() {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  for (auto* p : params()) out.emplace_back(p->name, p->shape);
  for (auto* tower : {arousal_.get(), accel_.get()}) {
    if (!tower) continue;
    for (auto* bn : tower->norms()) {
      const std::string base = bn->gamma.name.substr(0, bn->gamma.name.size() - std::string(".weight").size());
      out.emplace_back(base + ".running_mean", std::vector<std::size_t>{bn->running_mean.size()});
      out.emplace_back(base + ".running_var", std::vector<std::size_t>{bn->running_var.size()});
    }
  }
  return out;
}

template <typename T>
std::vector<T> TwoTowerCnn<T>::state() {
  std::vector<T> flat;
  for (auto* p : params()) flat.insert(flat.end(), p->value.begin(), p->value.end());
  for (auto* tower : {arousal_.get(), accel_.get()}) {
    if (!tower) continue;
    for (auto* bn : tower->norms()) {
      flat.insert(flat.end(), bn->running_mean.begin(), bn->running_mean.end());
      flat.insert(flat.end(), bn->running_var.begin(), bn->running_var.end());
    }
  }
  return flat;
}

template <typename T>
void TwoTowerCnn<T>::load_state(std::span<const T> flat) {
  std::size_t off = 0;
  auto take = [&](auto& dst) {
    require(off + dst.size() <= flat.size(), "cnn: state vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
    off += dst.size();
  };
  for (auto* p : params()) take(p->value);
  for (auto* tower : {arousal_.get(), accel_.get()}) {
    if (!tower) continue;
    for (auto* bn : tower->norms()) {
      take(bn->running_mean);
      take(bn->running_var);
    }
  }
  require(off == flat.size(), "cnn: state vector too long");
}

template <typename T>
std::size_t TwoTowerCnn<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += p->size();
  return n;
}

// Optimizer and scheduler ------------------------------------------------------

template <typename T>
AdamW<T>::AdamW(std::vector<Param<T>*> params, const AdamWConfig& config)
    : params_(std::move(params)), cfg_(config), lr_(config.lr) {
  for (auto* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

template <typename T>
void AdamW<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    const double decay = p.decay ? 1.0 - lr_ * cfg_.weight_decay : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      double w = p.value[i] * decay;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      w -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      p.value[i] = static_cast<T>(w);
    }
  }
}

double PlateauScheduler::step(double metric, double lr) {
  const double margin = std::isfinite(best_) ? threshold_ * std::abs(best_) : 0.0;
  if (metric > best_ + margin) {
    best_ = metric;
    bad_ = 0;
    return lr;
  }
  if (++bad_ > patience_) {
    bad_ = 0;
    return lr * factor_;
  }
  return lr;
}

#define IMPAIRDETECT_INSTANTIATE(T)                                                                             \
  template struct Tensor<T>;                                                                                   \
  template class Conv1d<T>;                                                                                    \
  template class BatchNorm1d<T>;                                                                               \
  template class ReLU<T>;                                                                                      \
  template class GlobalAvgPool<T>;                                                                             \
  template class Linear<T>;                                                                                    \
  template class Dropout<T>;                                                                                   \
  template class Tower<T>;                                                                                     \
  template class TwoTowerCnn<T>;                                                                               \
  template class AdamW<T>;                                                                                     \
  template LossResult<T> weighted_bce_with_logits<T>(const Tensor<T>&, std::span<const double>,               \
                                                     const std::array<double, 2>&);                           \
  template LossResult<T> cross_entropy<T>(const Tensor<T>&, std::span<const int>, std::span<const double>);   \
  template LossResult<T> smooth_l1<T>(const Tensor<T>&, std::span<const double>, double);

IMPAIRDETECT_INSTANTIATE(float)
IMPAIRDETECT_INSTANTIATE(double)

}  // namespace impairdetect::nn
