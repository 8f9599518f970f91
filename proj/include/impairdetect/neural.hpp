#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "impairdetect/rng.hpp"

namespace impairdetect::nn {

/// Buffers start on the widest SIMD boundary so vectorized kernels split work
/// the same way on every run; with plain vectors the summation order would
/// depend on where malloc happened to place the data.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense row-major tensor of shape (B, C, L) or (B, F).
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  AlignedVector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);
  Tensor(std::vector<std::size_t> s, std::vector<T> values);

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
};

template <typename T>
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  AlignedVector<T> value;
  AlignedVector<T> grad;
  bool decay = true;

  std::size_t size() const { return value.size(); }
};

/// Cross-correlation with zero padding.
template <typename T>
class Conv1d {
 public:
  Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, std::string name = "conv");

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
  void init(Rng& rng);
  std::size_t out_length(std::size_t length) const;
  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates parameter gradients; returns dL/dx unless input_grad is false.
  Tensor<T> backward(const Tensor<T>& dy, bool input_grad = true);

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return k_; }
  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return pad_; }

  Param<T> weight;  // (out, in, k)
  Param<T> bias;    // (out)

 private:
  void valid_range(std::size_t kk, std::size_t length, std::size_t out_len, std::size_t& lo, std::size_t& hi) const;
  void im2col(const T* x, std::size_t length, std::size_t out_len, T* col) const;
  std::size_t in_, out_, k_, stride_, pad_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm1d {
 public:
  explicit BatchNorm1d(std::size_t channels, std::string name = "bn", double eps = 1e-5, double momentum = 0.1);

  /// Training mode normalizes over (B, L) and updates the running statistics
  /// (unbiased variance); evaluation mode uses the running statistics.
  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& dy);

  Param<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  double eps, momentum;

 private:
  std::size_t c_;
  bool last_training_ = false;
  Tensor<T> xhat_;
  AlignedVector<T> inv_std_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Tensor<T> out_;
};

/// (B, C, L) -> (B, C) mean over L.
template <typename T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  std::size_t length_ = 0;
};

template <typename T>
class Linear {
 public:
  Linear(std::size_t in_features, std::size_t out_features, std::string name = "fc");
  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

  Param<T> weight;  // (out, in)
  Param<T> bias;

 private:
  std::size_t in_, out_;
  Tensor<T> input_;
};

/// Inverted dropout: kept units are scaled by 1 / (1 - p). Identity when not training.
template <typename T>
class Dropout {
 public:
  explicit Dropout(double p) : p_(p) {}
  Tensor<T> forward(const Tensor<T>& x, bool training, Rng& rng);
  Tensor<T> backward(const Tensor<T>& dy) const;
  double p() const { return p_; }

 private:
  double p_;
  AlignedVector<T> mask_;
  bool active_ = false;
};

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // dL/dlogits
};

/// Mean over the batch of w_{y_i} * BCE(sigmoid(z_i), y_i), computed as
/// softplus(z) - y z.
template <typename T>
LossResult<T> weighted_bce_with_logits(const Tensor<T>& logits, std::span<const double> targets,
                                       const std::array<double, 2>& class_weights);

/// Mean cross-entropy of softmax(logits); targets are class indices 0..K-1.
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                            std::span<const double> class_weights = {});

/// Mean smooth L1 (Huber with delta): 0.5 r^2 / delta if |r| < delta, else |r| - 0.5 delta.
template <typename T>
LossResult<T> smooth_l1(const Tensor<T>& predictions, std::span<const double> targets, double delta = 1.0);

struct TowerSpec {
  std::vector<std::size_t> channels;
  std::size_t kernel = 5;
  std::size_t stride = 2;
};

struct CnnArch {
  bool use_arousal = true;
  bool use_accel = true;
  std::size_t arousal_length = 180;
  std::size_t accel_length = 4500;
  TowerSpec arousal_tower{{16, 32, 64}, 5, 2};
  TowerSpec accel_tower{{32, 64, 128, 128}, 7, 2};
  std::size_t hidden = 64;
  double dropout = 0.3;
  std::size_t outputs = 1;

  std::size_t embedding_dim() const;
};

/// Stack of Conv1d + BatchNorm1d + ReLU blocks with same-style padding
/// (kernel - 1) / 2, followed by global average pooling.
template <typename T>
class Tower {
 public:
  Tower(const TowerSpec& spec, const std::string& name);
  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, bool training);
  void backward(const Tensor<T>& d_embedding);
  std::vector<Param<T>*> params();
  std::vector<BatchNorm1d<T>*> norms();
  /// (channels, length) after each block of the last forward pass.
  const std::vector<std::pair<std::size_t, std::size_t>>& trace() const { return trace_; }
  std::size_t blocks() const { return convs_.size(); }
  const Conv1d<T>& conv(std::size_t i) const { return convs_[i]; }

 private:
  std::vector<Conv1d<T>> convs_;
  std::vector<BatchNorm1d<T>> bns_;
  std::vector<ReLU<T>> relus_;
  GlobalAvgPool<T> pool_;
  std::vector<std::pair<std::size_t, std::size_t>> trace_;
};

/// Late-fusion network: one tower per modality, concatenated embeddings, one
/// hidden layer with ReLU and dropout, output logits.
template <typename T>
class TwoTowerCnn {
 public:
  TwoTowerCnn(const CnnArch& arch, std::uint64_t seed);

  /// arousal (B, 1, arousal_length), accel (B, 1, accel_length); a disabled
  /// tower's input is ignored and may be empty.
  Tensor<T> forward(const Tensor<T>& arousal, const Tensor<T>& accel, bool training);
  void backward(const Tensor<T>& d_logits);
  void zero_grad();

  std::vector<Param<T>*> params();
  /// Trainable parameters followed by batch-norm running statistics, in a
  /// fixed order; the checkpoint layout.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> state_layout();
  std::vector<T> state() ;
  void load_state(std::span<const T> flat);
  std::size_t parameter_count();

  const CnnArch& arch() const { return arch_; }
  Tower<T>* arousal_tower() { return arousal_.get(); }
  Tower<T>* accel_tower() { return accel_.get(); }
  Rng& dropout_rng() { return rng_; }

 private:
  CnnArch arch_;
  std::unique_ptr<Tower<T>> arousal_, accel_;
  Linear<T> fc1_, fc2_;
  ReLU<T> relu_;
  Dropout<T> dropout_;
  Rng rng_;
  std::size_t batch_ = 0;
  std::size_t arousal_dim_ = 0;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// Adam with decoupled weight decay applied before the moment update.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Param<T>*> params, const AdamWConfig& config);
  void step();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Param<T>*> params_;
  AdamWConfig cfg_;
  double lr_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

/// Reduce-on-plateau for a metric that should increase.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience, double threshold = 1e-4) : factor_(factor), patience_(patience), threshold_(threshold) {}
  /// Returns the new learning rate.
  double step(double metric, double lr);
  int bad_epochs() const { return bad_; }

 private:
  double factor_;
  int patience_;
  double threshold_;
  double best_ = -std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

}  // namespace impairdetect::nn
