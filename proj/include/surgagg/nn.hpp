#pragma once

// Minimal dense network kernel: a feature extractor built from dense,
// batch-norm and ReLU layers, followed by a dense classification head and a
// sigmoid. Forward, analytic backward, masked BCE and plain SGD.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "surgagg/errors.hpp"
#include "surgagg/tensor.hpp"

namespace surgagg {

enum class LayerKind { dense, batchnorm, relu, sigmoid };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(std::string_view s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "batchnorm") return LayerKind::batchnorm;
  if (s == "relu") return LayerKind::relu;
  if (s == "sigmoid") return LayerKind::sigmoid;
  throw ConfigError("unknown layer kind '" + std::string(s) + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Feature extractor layout. The head (dense N->W followed by sigmoid) is
/// implied and appended by `layers(head_width)`.
class Architecture {
 public:
  Architecture() = default;
  explicit Architecture(std::size_t input_dim) : input_dim_(input_dim) {}

  Architecture& add_dense(std::size_t out) {
    if (out == 0) throw ConfigError("dense layer requires out_dim >= 1");
    layers_.push_back({LayerKind::dense, feature_width(), out});
    return *this;
  }
  Architecture& add_batchnorm() {
    layers_.push_back({LayerKind::batchnorm, feature_width(), feature_width()});
    return *this;
  }
  Architecture& add_relu() {
    layers_.push_back({LayerKind::relu, feature_width(), feature_width()});
    return *this;
  }

  std::size_t input_dim() const { return input_dim_; }
  const std::vector<LayerSpec>& feature_layers() const { return layers_; }

  /// Output width of the feature extractor, i.e. N rows of the head matrix.
  std::size_t feature_width() const { return layers_.empty() ? input_dim_ : layers_.back().out_dim; }

  std::size_t dense_count() const { return count(LayerKind::dense); }
  std::size_t batchnorm_count() const { return count(LayerKind::batchnorm); }

  /// Full layer list of a classifier with `head_width` outputs.
  std::vector<LayerSpec> layers(std::size_t head_width) const {
    if (head_width == 0) throw ConfigError("classification head needs at least one class");
    auto out = layers_;
    out.push_back({LayerKind::dense, feature_width(), head_width});
    out.push_back({LayerKind::sigmoid, head_width, head_width});
    return out;
  }

  void validate() const {
    if (input_dim_ == 0) throw ConfigError("architecture input_dim must be >= 1");
    std::size_t width = input_dim_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.in_dim != width) {
        throw ConfigError("layer " + std::to_string(i) + " in_dim " + std::to_string(l.in_dim) +
                          " does not match previous width " + std::to_string(width));
      }
      if (l.kind == LayerKind::sigmoid) throw ConfigError("sigmoid is reserved for the head");
      if (l.kind == LayerKind::dense && l.out_dim == 0) throw ConfigError("dense requires out_dim >= 1");
      if (l.kind != LayerKind::dense && l.in_dim != l.out_dim) {
        throw ConfigError("layer " + std::to_string(i) + " must preserve width");
      }
      width = l.out_dim;
    }
  }

  /// dense(d->32)-batchnorm-relu-dense(32->16)-relu.
  static Architecture default_mlp(std::size_t input_dim) {
    Architecture a(input_dim);
    a.add_dense(32).add_batchnorm().add_relu().add_dense(16).add_relu();
    return a;
  }

  /// No hidden layers: the head acts directly on the inputs (logistic model).
  static Architecture linear(std::size_t input_dim) { return Architecture(input_dim); }

  friend bool operator==(const Architecture&, const Architecture&) = default;

 private:
  std::size_t count(LayerKind k) const {
    return static_cast<std::size_t>(
        std::count_if(layers_.begin(), layers_.end(), [k](const LayerSpec& l) { return l.kind == k; }));
  }

  std::size_t input_dim_ = 0;
  std::vector<LayerSpec> layers_;
};

struct DenseParams {
  Tensor2 W;  // in x out
  Vector b;   // out

  friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

struct BatchNormState {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  explicit BatchNormState(std::size_t width = 0)
      : gamma(width, 1.0), beta(width, 0.0), running_mean(width, 0.0), running_var(width, 1.0) {}

  std::size_t width() const { return gamma.size(); }

  friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

/// Everything before the classification head.
struct FeatureParams {
  std::vector<DenseParams> dense;
  std::vector<BatchNormState> bn;

  friend bool operator==(const FeatureParams&, const FeatureParams&) = default;
};

/// A model's parameters: feature extractor F and head G (one column per class).
struct ParamSet {
  FeatureParams feature;
  Tensor2 head_W;  // N x W
  Vector head_b;   // W

  std::size_t head_width() const { return head_b.size(); }

  bool all_finite() const {
    auto fin = [](const Vector& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    for (const auto& d : feature.dense)
      if (!d.W.all_finite() || !fin(d.b)) return false;
    for (const auto& s : feature.bn)
      if (!fin(s.gamma) || !fin(s.beta) || !fin(s.running_mean) || !fin(s.running_var)) return false;
    return head_W.all_finite() && fin(head_b);
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

struct BatchNormGrad {
  Vector gamma;
  Vector beta;
};

/// Gradient with the shape of the trainable part of a ParamSet.
struct ParamGrad {
  std::vector<DenseParams> dense;
  std::vector<BatchNormGrad> bn;
  Tensor2 head_W;
  Vector head_b;
};

enum class Mode { train, eval };

struct BatchNormCache {
  Tensor2 xhat;
  Vector inv_std;
};

/// Intermediate values of one forward pass, consumed by `backward`.
struct ForwardCache {
  Mode mode = Mode::eval;
  // activations[0] is the input; activations[i + 1] is the output of layer i.
  std::vector<Tensor2> activations;
  std::vector<BatchNormCache> bn;

  const Tensor2& output() const { return activations.back(); }
};

inline constexpr std::string_view kFeatureGroup = "feature_extractor";
inline constexpr std::string_view kHeadGroup = "head";
inline constexpr double kProbabilityClamp = 1e-7;

namespace detail {

// out = x * W + b
inline Tensor2 affine(const Tensor2& x, const Tensor2& W, const Vector& b) {
  Tensor2 out(x.rows, W.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto o = out.row(i);
    std::copy(b.begin(), b.end(), o.begin());
    for (std::size_t p = 0; p < x.cols; ++p) {
      const double xv = x(i, p);
      if (xv == 0.0) continue;
      const double* w = W.data.data() + p * W.cols;
      for (std::size_t j = 0; j < W.cols; ++j) o[j] += xv * w[j];
    }
  }
  return out;
}

// a^T * b
inline Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  Tensor2 out(a.cols, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      double* o = out.data.data() + p * out.cols;
      const double* bv = b.data.data() + i * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += av * bv[j];
    }
  }
  return out;
}

// a * b^T
inline Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  Tensor2 out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols; ++p) s += a(i, p) * b(j, p);
      out(i, j) = s;
    }
  }
  return out;
}

inline Vector column_sums(const Tensor2& t) {
  Vector s(t.cols, 0.0);
  for (std::size_t i = 0; i < t.rows; ++i)
    for (std::size_t j = 0; j < t.cols; ++j) s[j] += t(i, j);
  return s;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void check_shapes(const ParamSet& params, const Architecture& arch) {
  if (params.feature.dense.size() != arch.dense_count() || params.feature.bn.size() != arch.batchnorm_count()) {
    throw ConfigError("parameter layer counts do not match architecture");
  }
  std::size_t di = 0, bi = 0;
  for (const auto& l : arch.feature_layers()) {
    if (l.kind == LayerKind::dense) {
      const auto& d = params.feature.dense[di++];
      if (d.W.rows != l.in_dim || d.W.cols != l.out_dim || d.b.size() != l.out_dim) {
        throw ConfigError("dense layer " + std::to_string(di - 1) + " has shape " + shape_str(d.W) +
                          ", expected " + std::to_string(l.in_dim) + "x" + std::to_string(l.out_dim));
      }
    } else if (l.kind == LayerKind::batchnorm) {
      const auto& s = params.feature.bn[bi++];
      if (s.gamma.size() != l.in_dim || s.beta.size() != l.in_dim || s.running_mean.size() != l.in_dim ||
          s.running_var.size() != l.in_dim) {
        throw ConfigError("batchnorm layer " + std::to_string(bi - 1) + " width mismatch");
      }
    }
  }
  if (params.head_W.rows != arch.feature_width() || params.head_W.cols != params.head_b.size() ||
      params.head_b.empty()) {
    throw ConfigError("head shape " + shape_str(params.head_W) + " incompatible with feature width " +
                      std::to_string(arch.feature_width()));
  }
}

// When `stats` is non-null (train mode), running statistics are updated there.
inline ForwardCache forward_impl(const ParamSet& params, const Architecture& arch, const Tensor2& x, Mode mode,
                                 std::vector<BatchNormState>* stats) {
  check_shapes(params, arch);
  if (x.cols != arch.input_dim()) {
    throw ConfigError("input has " + std::to_string(x.cols) + " columns, architecture expects " +
                      std::to_string(arch.input_dim()));
  }
  const auto layers = arch.layers(params.head_width());
  ForwardCache cache;
  cache.mode = mode;
  cache.activations.reserve(layers.size() + 1);
  cache.activations.push_back(x);

  std::size_t di = 0, bi = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const Tensor2& in = cache.activations.back();
    Tensor2 out;
    switch (layers[li].kind) {
      case LayerKind::dense: {
        const bool is_head = li + 2 == layers.size();
        if (is_head) {
          out = affine(in, params.head_W, params.head_b);
        } else {
          const auto& d = params.feature.dense[di++];
          out = affine(in, d.W, d.b);
        }
        break;
      }
      case LayerKind::batchnorm: {
        const auto& s = params.feature.bn[bi];
        const std::size_t n = in.rows, w = in.cols;
        BatchNormCache bc{Tensor2(n, w), Vector(w)};
        Vector mean(w, 0.0), var(w, 0.0);
        if (mode == Mode::train) {
          if (n == 0) throw ConfigError("batchnorm in train mode needs a non-empty batch");
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) mean[j] += in(i, j);
          for (auto& m : mean) m /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) {
              const double dv = in(i, j) - mean[j];
              var[j] += dv * dv;
            }
          for (auto& v : var) v /= static_cast<double>(n);
          if (stats != nullptr) {
            auto& rs = (*stats)[bi];
            for (std::size_t j = 0; j < w; ++j) {
              rs.running_mean[j] = (1.0 - rs.momentum) * rs.running_mean[j] + rs.momentum * mean[j];
              rs.running_var[j] = (1.0 - rs.momentum) * rs.running_var[j] + rs.momentum * var[j];
            }
          }
        } else {
          mean = s.running_mean;
          var = s.running_var;
        }
        for (std::size_t j = 0; j < w; ++j) bc.inv_std[j] = 1.0 / std::sqrt(var[j] + s.epsilon);
        out = Tensor2(n, w);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double xh = (in(i, j) - mean[j]) * bc.inv_std[j];
            bc.xhat(i, j) = xh;
            out(i, j) = s.gamma[j] * xh + s.beta[j];
          }
        cache.bn.push_back(std::move(bc));
        ++bi;
        break;
      }
      case LayerKind::relu:
        out = in;
        for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
        break;
      case LayerKind::sigmoid:
        out = in;
        for (auto& v : out.data) v = sigmoid(v);
        break;
    }
    if (!out.all_finite()) {
      throw NumericError("non-finite activation at layer " + std::to_string(li) + " (" +
                             std::string(to_string(layers[li].kind)) + ")",
                         static_cast<std::ptrdiff_t>(li));
    }
    cache.activations.push_back(std::move(out));
  }
  return cache;
}

inline void check_mask(std::span<const std::size_t> mask, std::size_t cols) {
  if (mask.empty()) throw ConfigError("loss mask must contain at least one class");
  for (auto c : mask)
    if (c >= cols) throw ConfigError("mask column " + std::to_string(c) + " out of range");
}

}  // namespace detail

/// Forward pass. In train mode batch-norm normalizes with batch statistics and
/// folds them into the running statistics stored in `params`.
inline ForwardCache forward(ParamSet& params, const Architecture& arch, const Tensor2& x, Mode mode) {
  return detail::forward_impl(params, arch, x, mode, mode == Mode::train ? &params.feature.bn : nullptr);
}

/// Eval-mode forward; returns class probabilities.
inline Tensor2 predict(const ParamSet& params, const Architecture& arch, const Tensor2& x) {
  auto cache = detail::forward_impl(params, arch, x, Mode::eval, nullptr);
  return std::move(cache.activations.back());
}

/// Mean binary cross-entropy over samples and the classes in `mask`,
/// i.e. (1/|mask|) * mean_i sum_{c in mask} BCE(p_ic, y_ic).
inline double masked_bce_loss(const Tensor2& p, const Tensor2& y, std::span<const std::size_t> mask) {
  if (!p.same_shape(y)) throw ConfigError("loss: prediction " + shape_str(p) + " vs labels " + shape_str(y));
  detail::check_mask(mask, p.cols);
  if (p.rows == 0) throw ConfigError("loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.rows; ++i) {
    for (auto c : mask) {
      const double pc = std::clamp(p(i, c), kProbabilityClamp, 1.0 - kProbabilityClamp);
      total -= y(i, c) > 0.5 ? std::log(pc) : std::log1p(-pc);
    }
  }
  return total / (static_cast<double>(p.rows) * static_cast<double>(mask.size()));
}

/// Gradient of masked_bce_loss with respect to every trainable parameter.
/// Head columns outside `mask` receive exactly zero gradient.
inline ParamGrad backward(const ParamSet& params, const Architecture& arch, const ForwardCache& cache,
                          const Tensor2& y, std::span<const std::size_t> mask) {
  const auto layers = arch.layers(params.head_width());
  if (cache.activations.size() != layers.size() + 1 || cache.bn.size() != arch.batchnorm_count()) {
    throw ContractViolation("backward: cache does not match architecture");
  }
  const Tensor2& p = cache.output();
  if (!p.same_shape(y)) throw ContractViolation("backward: output " + shape_str(p) + " vs labels " + shape_str(y));
  detail::check_mask(mask, p.cols);

  const double scale = 1.0 / (static_cast<double>(p.rows) * static_cast<double>(mask.size()));
  Tensor2 delta(p.rows, p.cols);  // dL/dlogit
  for (std::size_t i = 0; i < p.rows; ++i)
    for (auto c : mask) delta(i, c) = (p(i, c) - y(i, c)) * scale;

  ParamGrad g;
  g.dense.resize(arch.dense_count());
  g.bn.resize(arch.batchnorm_count());

  const std::size_t head_li = layers.size() - 2;
  const Tensor2& head_in = cache.activations[head_li];
  if (head_in.cols != params.head_W.rows) throw ContractViolation("backward: stale head input");
  g.head_W = detail::matmul_tn(head_in, delta);
  g.head_b = detail::column_sums(delta);
  if (head_li == 0) return g;
  delta = detail::matmul_nt(delta, params.head_W);

  std::size_t di = arch.dense_count(), bi = arch.batchnorm_count();
  for (std::size_t li = head_li; li-- > 0;) {
    const Tensor2& in = cache.activations[li];
    const Tensor2& out = cache.activations[li + 1];
    if (!out.same_shape(delta)) throw ContractViolation("backward: stale activations at layer " + std::to_string(li));
    switch (layers[li].kind) {
      case LayerKind::relu:
        for (std::size_t k = 0; k < delta.data.size(); ++k)
          if (out.data[k] <= 0.0) delta.data[k] = 0.0;
        break;
      case LayerKind::batchnorm: {
        --bi;
        const auto& s = params.feature.bn[bi];
        const auto& bc = cache.bn[bi];
        const std::size_t n = delta.rows, w = delta.cols;
        auto& gb = g.bn[bi];
        gb.gamma.assign(w, 0.0);
        gb.beta.assign(w, 0.0);
        Vector sum_dxh(w, 0.0), sum_dxh_xh(w, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double dy = delta(i, j);
            gb.gamma[j] += dy * bc.xhat(i, j);
            gb.beta[j] += dy;
            const double dxh = dy * s.gamma[j];
            sum_dxh[j] += dxh;
            sum_dxh_xh[j] += dxh * bc.xhat(i, j);
          }
        if (li == 0) break;
        const double nn = static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double dxh = delta(i, j) * s.gamma[j];
            if (cache.mode == Mode::train) {
              delta(i, j) = bc.inv_std[j] / nn * (nn * dxh - sum_dxh[j] - bc.xhat(i, j) * sum_dxh_xh[j]);
            } else {
              delta(i, j) = dxh * bc.inv_std[j];
            }
          }
        break;
      }
      case LayerKind::dense: {
        --di;
        const auto& d = params.feature.dense[di];
        if (in.cols != d.W.rows) throw ContractViolation("backward: stale input at layer " + std::to_string(li));
        g.dense[di].W = detail::matmul_tn(in, delta);
        g.dense[di].b = detail::column_sums(delta);
        if (li > 0) delta = detail::matmul_nt(delta, d.W);
        break;
      }
      case LayerKind::sigmoid:
        throw ContractViolation("sigmoid inside feature extractor");
    }
  }
  return g;
}

/// p <- p - lr * g for every group not listed in `frozen`. Batch-norm running
/// statistics are not trainable and never change here.
inline void sgd_step(ParamSet& params, const ParamGrad& grads, double lr, const std::set<std::string>& frozen = {}) {
  for (const auto& name : frozen) {
    if (name != kFeatureGroup && name != kHeadGroup) throw ConfigError("unknown parameter group '" + name + "'");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
  if (grads.dense.size() != params.feature.dense.size() || grads.bn.size() != params.feature.bn.size() ||
      !grads.head_W.same_shape(params.head_W) || grads.head_b.size() != params.head_b.size()) {
    throw ContractViolation("sgd_step: gradient shape mismatch");
  }
  if (lr == 0.0) return;
  auto step = [lr](std::vector<double>& p, const std::vector<double>& g) {
    if (p.size() != g.size()) throw ContractViolation("sgd_step: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  };
  if (!frozen.contains(std::string(kFeatureGroup))) {
    for (std::size_t i = 0; i < params.feature.dense.size(); ++i) {
      step(params.feature.dense[i].W.data, grads.dense[i].W.data);
      step(params.feature.dense[i].b, grads.dense[i].b);
    }
    for (std::size_t i = 0; i < params.feature.bn.size(); ++i) {
      step(params.feature.bn[i].gamma, grads.bn[i].gamma);
      step(params.feature.bn[i].beta, grads.bn[i].beta);
    }
  }
  if (!frozen.contains(std::string(kHeadGroup))) {
    step(params.head_W.data, grads.head_W.data);
    step(params.head_b, grads.head_b);
  }
}

}  // namespace surgagg
