#pragma once

// Small fixed-architecture training toolkit: dense layers, MLPs with optional
// batch normalisation, the shared point-set encoder, Adam and the linear
// learning-rate schedule. Everything is templated on the scalar type so the
// same code runs in float for training and double for gradient checks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "langsg/errors.hpp"
#include "langsg/rng.hpp"

namespace langsg {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)) {}
  void zero_grad() { grad.setZero(); }
};

enum class Mode { Train, Eval };

struct MlpSpec {
  std::vector<int> widths;        // input width followed by each layer's output width
  std::vector<bool> relu;         // per layer
  std::vector<bool> batch_norm;   // per layer, applied before the activation

  int num_layers() const { return static_cast<int>(widths.size()) - 1; }
  int in_width() const { return widths.front(); }
  int out_width() const { return widths.back(); }
  void validate() const;

  /// ReLU after every layer except the last; no batch norm.
  static MlpSpec hidden_relu(std::vector<int> widths);
  /// ReLU after every layer including the last.
  static MlpSpec all_relu(std::vector<int> widths);
  /// Linear -> BN -> ReLU for hidden layers, plain linear output.
  static MlpSpec hidden_bn_relu(std::vector<int> widths);

  std::string describe() const;
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

template <typename T>
struct BatchNormCache {
  Mat<T> xhat;
  RowVec<T> inv_std;
};

template <typename T>
struct MlpCache {
  std::vector<Mat<T>> inputs;  // input of each linear layer
  std::vector<Mat<T>> pre;     // value fed to the activation
  std::vector<BatchNormCache<T>> bn;
};

template <typename T>
class Mlp {
 public:
  Mlp() = default;
  /// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases.
  Mlp(MlpSpec spec, std::string name, Rng& rng);

  const MlpSpec& spec() const { return spec_; }

  /// Training-mode pass; batch-norm layers use batch statistics and update
  /// their running averages.
  Mat<T> forward_train(const Mat<T>& x, MlpCache<T>& cache);
  /// Evaluation-mode pass (running statistics).
  Mat<T> forward(const Mat<T>& x) const;
  /// Accumulates parameter gradients and returns d(loss)/d(input).
  Mat<T> backward(const Mat<T>& dy, const MlpCache<T>& cache);

  template <typename F>
  void for_each_param(F&& f) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      f(weights_[l]);
      f(biases_[l]);
      if (spec_.batch_norm[l]) {
        f(gammas_[l]);
        f(betas_[l]);
      }
    }
  }
  template <typename F>
  void for_each_buffer(F&& f) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      if (spec_.batch_norm[l]) {
        f(prefix_ + ".bn" + std::to_string(l) + ".running_mean", running_mean_[l]);
        f(prefix_ + ".bn" + std::to_string(l) + ".running_var", running_var_[l]);
      }
    }
  }

  Param<T>& weight(int layer) { return weights_[layer]; }
  Param<T>& bias(int layer) { return biases_[layer]; }
  const Param<T>& weight(int layer) const { return weights_[layer]; }
  const Param<T>& bias(int layer) const { return biases_[layer]; }

  template <typename U>
  Mlp<U> cast() const;

 private:
  template <typename U>
  friend class Mlp;

  Mat<T> forward_impl(const Mat<T>& x, Mode mode, MlpCache<T>* cache, bool update_stats);

  MlpSpec spec_;
  std::string prefix_;
  std::vector<Param<T>> weights_;  // in x out
  std::vector<Param<T>> biases_;   // 1 x out
  std::vector<Param<T>> gammas_;
  std::vector<Param<T>> betas_;
  std::vector<Mat<T>> running_mean_;
  std::vector<Mat<T>> running_var_;
};

template <typename T>
struct PointEncoderCache {
  MlpCache<T> mlp;
  Mat<Eigen::Index> argmax;  // winning row per (segment, output column)
  Eigen::Index rows = 0;
};

/// Shared per-point MLP followed by max pooling over each point set. Several
/// point sets can be encoded in one pass by stacking them row-wise and
/// passing segment offsets (size = sets + 1).
template <typename T>
class PointEncoder {
 public:
  PointEncoder() = default;
  /// widths: input channels, hidden widths..., output width. ReLU on hidden
  /// layers only.
  PointEncoder(std::vector<int> widths, std::string name, Rng& rng);

  int in_channels() const { return mlp_.spec().in_width(); }
  int out_width() const { return mlp_.spec().out_width(); }

  /// points: N x C with N >= 1. Returns 1 x F.
  Mat<T> forward(const Mat<T>& points) const;
  Mat<T> forward_segments(const Mat<T>& points, const std::vector<Eigen::Index>& offsets) const;
  Mat<T> forward_train(const Mat<T>& points, const std::vector<Eigen::Index>& offsets, PointEncoderCache<T>& cache);
  /// dy: one row per segment.
  void backward(const Mat<T>& dy, const PointEncoderCache<T>& cache);

  Mlp<T>& mlp() { return mlp_; }
  const Mlp<T>& mlp() const { return mlp_; }

  template <typename F>
  void for_each_param(F&& f) {
    mlp_.for_each_param(f);
  }

  template <typename U>
  PointEncoder<U> cast() const {
    PointEncoder<U> out;
    out.mlp() = mlp_.template cast<U>();
    return out;
  }

 private:
  static void check_segments(const Mat<T>& points, const std::vector<Eigen::Index>& offsets);
  static Mat<T> pool(const Mat<T>& h, const std::vector<Eigen::Index>& offsets, Mat<Eigen::Index>* argmax);

  Mlp<T> mlp_;
};

// ---------------------------------------------------------------------------
// Optimisation

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 added to the gradient; off by default
  double grad_clip = 0.0;     // global-norm clip; off by default
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One bias-corrected update of every parameter. Throws TrainingError
  /// naming the parameter on a non-finite gradient and ShapeError when the
  /// stored moments do not match.
  void step(const std::vector<Param<T>*>& params, double lr);

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

  struct Moments {
    Mat<T> m;
    Mat<T> v;
  };
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void set_steps(std::int64_t s) { step_ = s; }

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

/// base_lr * (1 - epoch / total_epochs).
double linear_lr(int epoch, int total_epochs, double base_lr);

// ---------------------------------------------------------------------------
// Implementation

template <typename T>
Mlp<T>::Mlp(MlpSpec spec, std::string name, Rng& rng) : spec_(std::move(spec)), prefix_(std::move(name)) {
  spec_.validate();
  const int layers = spec_.num_layers();
  for (int l = 0; l < layers; ++l) {
    const int in = spec_.widths[l];
    const int out = spec_.widths[l + 1];
    const std::string base = prefix_ + ".l" + std::to_string(l);
    Param<T> w(base + ".weight", in, out);
    const double bound = std::sqrt(6.0 / in);
    for (Eigen::Index i = 0; i < w.value.size(); ++i) w.value.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    weights_.push_back(std::move(w));
    biases_.emplace_back(base + ".bias", 1, out);
    if (spec_.batch_norm[l]) {
      Param<T> g(base + ".bn.gamma", 1, out);
      g.value.setOnes();
      gammas_.push_back(std::move(g));
      betas_.emplace_back(base + ".bn.beta", 1, out);
      running_mean_.push_back(Mat<T>::Zero(1, out));
      running_var_.push_back(Mat<T>::Ones(1, out));
    } else {
      gammas_.emplace_back();
      betas_.emplace_back();
      running_mean_.emplace_back();
      running_var_.emplace_back();
    }
  }
}

template <typename T>
Mat<T> Mlp<T>::forward_train(const Mat<T>& x, MlpCache<T>& cache) {
  return forward_impl(x, Mode::Train, &cache, true);
}

template <typename T>
Mat<T> Mlp<T>::forward(const Mat<T>& x) const {
  return const_cast<Mlp<T>*>(this)->forward_impl(x, Mode::Eval, nullptr, false);
}

template <typename T>
Mat<T> Mlp<T>::forward_impl(const Mat<T>& x, Mode mode, MlpCache<T>* cache, bool update_stats) {
  if (x.cols() != spec_.in_width()) {
    throw ShapeError(prefix_ + ": input width " + std::to_string(x.cols()) + " != " +
                     std::to_string(spec_.in_width()));
  }
  const int layers = spec_.num_layers();
  if (cache) {
    cache->inputs.resize(layers);
    cache->pre.resize(layers);
    cache->bn.resize(layers);
  }
  Mat<T> h = x;
  for (int l = 0; l < layers; ++l) {
    Mat<T> z = h * weights_[l].value;
    z.rowwise() += biases_[l].value.row(0);
    if (cache) cache->inputs[l] = std::move(h);
    if (spec_.batch_norm[l]) {
      const T eps = static_cast<T>(kBatchNormEps);
      if (mode == Mode::Train) {
        const Eigen::Index n = z.rows();
        RowVec<T> mean = z.colwise().mean();
        Mat<T> centered = z.rowwise() - mean;
        RowVec<T> var = centered.array().square().colwise().sum() / static_cast<T>(n);
        RowVec<T> inv_std = (var.array() + eps).rsqrt();
        Mat<T> xhat = centered.array().rowwise() * inv_std.array();
        if (update_stats) {
          const T m = static_cast<T>(kBatchNormMomentum);
          const T unbias = n > 1 ? static_cast<T>(n) / static_cast<T>(n - 1) : T(1);
          running_mean_[l] = (T(1) - m) * running_mean_[l] + m * mean;
          running_var_[l] = (T(1) - m) * running_var_[l] + m * (var * unbias);
        }
        z = (xhat.array().rowwise() * gammas_[l].value.row(0).array()).rowwise() + betas_[l].value.row(0).array();
        if (cache) {
          cache->bn[l].xhat = std::move(xhat);
          cache->bn[l].inv_std = std::move(inv_std);
        }
      } else {
        RowVec<T> inv_std = (running_var_[l].row(0).array() + eps).rsqrt();
        RowVec<T> scale = inv_std.array() * gammas_[l].value.row(0).array();
        RowVec<T> shift = betas_[l].value.row(0).array() - running_mean_[l].row(0).array() * scale.array();
        z = (z.array().rowwise() * scale.array()).rowwise() + shift.array();
      }
    }
    if (cache) cache->pre[l] = z;
    if (spec_.relu[l]) z = z.cwiseMax(T(0));
    h = std::move(z);
  }
  return h;
}

template <typename T>
Mat<T> Mlp<T>::backward(const Mat<T>& dy, const MlpCache<T>& cache) {
  const int layers = spec_.num_layers();
  Mat<T> g = dy;
  for (int l = layers - 1; l >= 0; --l) {
    if (spec_.relu[l]) g = (cache.pre[l].array() > T(0)).select(g, T(0));
    if (spec_.batch_norm[l]) {
      const auto& bc = cache.bn[l];
      const T n = static_cast<T>(g.rows());
      gammas_[l].grad.row(0) += (g.array() * bc.xhat.array()).colwise().sum().matrix();
      betas_[l].grad.row(0) += g.colwise().sum();
      Mat<T> dxhat = g.array().rowwise() * gammas_[l].value.row(0).array();
      RowVec<T> sum_dxhat = dxhat.colwise().sum();
      RowVec<T> sum_dxhat_xhat = (dxhat.array() * bc.xhat.array()).colwise().sum();
      Mat<T> t = (dxhat * n).rowwise() - sum_dxhat;
      t -= (bc.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
      g = (t.array().rowwise() * (bc.inv_std.array() / n)).matrix();
    }
    weights_[l].grad.noalias() += cache.inputs[l].transpose() * g;
    biases_[l].grad.row(0) += g.colwise().sum();
    if (l > 0) {
      g = g * weights_[l].value.transpose();
    } else {
      return g * weights_[l].value.transpose();
    }
  }
  return g;
}

template <typename T>
template <typename U>
Mlp<U> Mlp<T>::cast() const {
  Mlp<U> out;
  out.spec_ = spec_;
  out.prefix_ = prefix_;
  auto conv = [](const Param<T>& p) {
    Param<U> q;
    q.name = p.name;
    q.value = p.value.template cast<U>();
    q.grad = p.grad.template cast<U>();
    return q;
  };
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.weights_.push_back(conv(weights_[l]));
    out.biases_.push_back(conv(biases_[l]));
    out.gammas_.push_back(conv(gammas_[l]));
    out.betas_.push_back(conv(betas_[l]));
    out.running_mean_.push_back(running_mean_[l].template cast<U>());
    out.running_var_.push_back(running_var_[l].template cast<U>());
  }
  return out;
}

template <typename T>
PointEncoder<T>::PointEncoder(std::vector<int> widths, std::string name, Rng& rng)
    : mlp_(MlpSpec::hidden_relu(std::move(widths)), std::move(name), rng) {}

template <typename T>
void PointEncoder<T>::check_segments(const Mat<T>& points, const std::vector<Eigen::Index>& offsets) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != points.rows()) {
    throw ShapeError("point encoder: bad segment offsets");
  }
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ShapeError("point encoder: empty point set");
  }
}

template <typename T>
Mat<T> PointEncoder<T>::pool(const Mat<T>& h, const std::vector<Eigen::Index>& offsets, Mat<Eigen::Index>* argmax) {
  const Eigen::Index sets = static_cast<Eigen::Index>(offsets.size()) - 1;
  const Eigen::Index cols = h.cols();
  Mat<T> out(sets, cols);
  if (argmax) argmax->resize(sets, cols);
  for (Eigen::Index s = 0; s < sets; ++s) {
    out.row(s) = h.row(offsets[s]);
    if (argmax) argmax->row(s).setConstant(offsets[s]);
    for (Eigen::Index r = offsets[s] + 1; r < offsets[s + 1]; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (h(r, c) > out(s, c)) {
          out(s, c) = h(r, c);
          if (argmax) (*argmax)(s, c) = r;
        }
      }
    }
  }
  return out;
}

template <typename T>
Mat<T> PointEncoder<T>::forward(const Mat<T>& points) const {
  return forward_segments(points, {0, points.rows()});
}

template <typename T>
Mat<T> PointEncoder<T>::forward_segments(const Mat<T>& points, const std::vector<Eigen::Index>& offsets) const {
  check_segments(points, offsets);
  return pool(mlp_.forward(points), offsets, nullptr);
}

template <typename T>
Mat<T> PointEncoder<T>::forward_train(const Mat<T>& points, const std::vector<Eigen::Index>& offsets,
                                      PointEncoderCache<T>& cache) {
  check_segments(points, offsets);
  Mat<T> h = mlp_.forward_train(points, cache.mlp);
  cache.rows = h.rows();
  return pool(h, offsets, &cache.argmax);
}

template <typename T>
void PointEncoder<T>::backward(const Mat<T>& dy, const PointEncoderCache<T>& cache) {
  Mat<T> dh = Mat<T>::Zero(cache.rows, dy.cols());
  for (Eigen::Index s = 0; s < dy.rows(); ++s) {
    for (Eigen::Index c = 0; c < dy.cols(); ++c) dh(cache.argmax(s, c), c) += dy(s, c);
  }
  mlp_.backward(dh, cache.mlp);
}

template <typename T>
void Adam<T>::step(const std::vector<Param<T>*>& params, double lr) {
  for (Param<T>* p : params) {
    if (!p->grad.allFinite()) throw TrainingError("non-finite gradient in parameter '" + p->name + "'");
  }
  double clip_scale = 1.0;
  if (config_.grad_clip > 0) {
    double sq = 0;
    for (Param<T>* p : params) sq += static_cast<double>(p->grad.squaredNorm());
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) clip_scale = config_.grad_clip / norm;
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  for (Param<T>* p : params) {
    auto [it, inserted] = moments_.try_emplace(p->name);
    Moments& mom = it->second;
    if (inserted) {
      mom.m = Mat<T>::Zero(p->value.rows(), p->value.cols());
      mom.v = Mat<T>::Zero(p->value.rows(), p->value.cols());
    }
    if (mom.m.rows() != p->value.rows() || mom.m.cols() != p->value.cols()) {
      throw ShapeError("adam: moment shape mismatch for '" + p->name + "'");
    }
    Mat<T> g = p->grad * static_cast<T>(clip_scale);
    if (config_.weight_decay > 0) g += static_cast<T>(config_.weight_decay) * p->value;
    mom.m = b1 * mom.m + (T(1) - b1) * g;
    mom.v = b2 * mom.v + (T(1) - b2) * g.cwiseProduct(g);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(config_.eps);
    p->value.array() -= step_size * mom.m.array() / (mom.v.array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

}  // namespace langsg
