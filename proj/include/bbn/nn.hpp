#pragma once

// Minimal dense-network engine: Affine/ReLU layer stacks with hand-written
// reverse passes, SGD with momentum and weight decay, a warmup + step-decay
// learning-rate schedule, and a numerically stable softmax cross-entropy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bbn/errors.hpp"
#include "bbn/random.hpp"
#include "bbn/tensor.hpp"

namespace bbn {

struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor momentum_buf;
  // Set whenever a backward pass accumulates into `grad`; cleared by
  // zero_grad(). sgd_step leaves parameters without a gradient untouched,
  // including weight decay and the momentum buffer.
  bool has_grad = false;

  Parameter() = default;
  explicit Parameter(Tensor v)
      : value(std::move(v)), grad(value.shape()), momentum_buf(value.shape()) {}

  void zero_grad() {
    grad.fill(0.0);
    has_grad = false;
  }

  void accumulate(const Tensor& g) {
    if (g.shape() != grad.shape()) {
      throw DimensionError("gradient " + shape_string(g.shape()) + " for parameter " +
                           shape_string(grad.shape()));
    }
    auto dst = grad.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    has_grad = true;
  }
};

// y = x * W + b, with W of shape (in_dim x out_dim).
struct Affine {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Parameter weight;
  std::optional<Parameter> bias;
};

struct ReLU {};

using Layer = std::variant<Affine, ReLU>;

// Uniform in [-1/sqrt(in), 1/sqrt(in)], zero bias.
inline Affine make_affine(std::size_t in_dim, std::size_t out_dim, Rng& rng, bool with_bias = true) {
  if (in_dim == 0 || out_dim == 0) throw DimensionError("affine layer with a zero dimension");
  Affine a;
  a.in_dim = in_dim;
  a.out_dim = out_dim;
  Tensor w = Tensor::matrix(in_dim, out_dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  a.weight = Parameter(std::move(w));
  if (with_bias) a.bias = Parameter(Tensor::matrix(1, out_dim));
  return a;
}

// Input batch followed by every layer's output; back() is the network output.
using Activations = std::vector<Tensor>;

class Network {
 public:
  Network() = default;

  // Appends Affine(in, out) [+ ReLU] for every consecutive pair in `widths`.
  // The final Affine gets a ReLU only if `relu_on_last`.
  static Network mlp(std::span<const std::size_t> widths, Rng& rng, bool relu_on_last,
                     bool bias_on_last = true) {
    if (widths.size() < 2) throw DimensionError("an MLP needs at least an input and output width");
    Network net;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool last = i + 2 == widths.size();
      net.add_affine(widths[i], widths[i + 1], rng, !last || bias_on_last);
      if (!last || relu_on_last) net.add_relu();
    }
    return net;
  }

  Network& add(Layer layer) {
    if (auto* a = std::get_if<Affine>(&layer)) {
      if (auto w = current_width(); w && *w != a->in_dim) {
        throw DimensionError("layer " + std::to_string(layers_.size()) + " expects width " +
                             std::to_string(a->in_dim) + " but previous layer emits " +
                             std::to_string(*w));
      }
    }
    layers_.push_back(std::move(layer));
    return *this;
  }

  Network& add_affine(std::size_t in_dim, std::size_t out_dim, Rng& rng, bool with_bias = true) {
    return add(make_affine(in_dim, out_dim, rng, with_bias));
  }

  Network& add_relu() { return add(ReLU{}); }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  std::size_t depth() const noexcept { return layers_.size(); }
  bool empty() const noexcept { return layers_.empty(); }

  std::size_t input_width() const {
    for (const auto& l : layers_)
      if (auto* a = std::get_if<Affine>(&l)) return a->in_dim;
    throw StateError("network has no affine layer");
  }

  std::size_t output_width() const {
    auto w = current_width();
    if (!w) throw StateError("network has no affine layer");
    return *w;
  }

  // Parameters in declaration order: for each Affine, weight then bias.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
      if (auto* a = std::get_if<Affine>(&l)) {
        out.push_back(&a->weight);
        if (a->bias) out.push_back(&*a->bias);
      }
    }
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& l : layers_) {
      if (const auto* a = std::get_if<Affine>(&l)) {
        out.push_back(&a->weight);
        if (a->bias) out.push_back(&*a->bias);
      }
    }
    return out;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  bool operator==(const Network& other) const {
    auto a = parameters();
    auto b = other.parameters();
    if (a.size() != b.size() || layers_.size() != other.layers_.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i]->value != b[i]->value) return false;
    return true;
  }

 private:
  std::optional<std::size_t> current_width() const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      if (auto* a = std::get_if<Affine>(&*it)) return a->out_dim;
    return std::nullopt;
  }

  std::vector<Layer> layers_;
};

namespace detail {

inline Tensor affine_forward(const Affine& a, const Tensor& x) {
  Tensor y = matmul(x, a.weight.value);
  if (a.bias) {
    const auto b = a.bias->value.values();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto row = y.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
    }
  }
  return y;
}

inline Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return y;
}

}  // namespace detail

inline Activations forward(const Network& net, const Tensor& batch) {
  if (batch.rank() != 2) throw DimensionError("batch must be a matrix, got " + shape_string(batch.shape()));
  Activations acts;
  acts.reserve(net.depth() + 1);
  acts.push_back(batch);
  for (std::size_t k = 0; k < net.depth(); ++k) {
    const Tensor& x = acts.back();
    const Layer& layer = net.layers()[k];
    if (const auto* a = std::get_if<Affine>(&layer)) {
      if (x.cols() != a->in_dim) {
        throw DimensionError("layer " + std::to_string(k) + " (affine " + std::to_string(a->in_dim) +
                             "->" + std::to_string(a->out_dim) + ") received width " +
                             std::to_string(x.cols()));
      }
      acts.push_back(detail::affine_forward(*a, x));
    } else {
      acts.push_back(detail::relu_forward(x));
    }
  }
  return acts;
}

// Network output only; safe to call concurrently on a shared network.
inline Tensor predict(const Network& net, const Tensor& batch) {
  if (net.empty()) return batch;
  return std::move(forward(net, batch).back());
}

// Accumulates parameter gradients for d(loss)/d(output) = upstream and
// returns d(loss)/d(input).
inline Tensor backward(Network& net, const Activations& acts, const Tensor& upstream) {
  if (acts.size() != net.depth() + 1) {
    throw StateError("activations hold " + std::to_string(acts.size()) + " tensors, network expects " +
                     std::to_string(net.depth() + 1));
  }
  if (upstream.shape() != acts.back().shape()) {
    throw DimensionError("upstream gradient " + shape_string(upstream.shape()) + " vs output " +
                         shape_string(acts.back().shape()));
  }
  Tensor g = upstream;
  for (std::size_t k = net.depth(); k-- > 0;) {
    const Tensor& x = acts[k];
    const Tensor& y = acts[k + 1];
    Layer& layer = net.layers()[k];
    if (auto* a = std::get_if<Affine>(&layer)) {
      if (x.rank() != 2 || x.cols() != a->in_dim || y.cols() != a->out_dim) {
        throw StateError("activations do not match layer " + std::to_string(k));
      }
      a->weight.accumulate(matmul_tn(x, g));
      if (a->bias) {
        Tensor gb = Tensor::matrix(1, a->out_dim);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto row = g.row(r);
          for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
        }
        a->bias->accumulate(gb);
      }
      g = matmul_nt(g, a->weight.value);
    } else {
      if (x.shape() != g.shape()) throw StateError("activations do not match layer " + std::to_string(k));
      auto gv = g.values();
      auto xv = x.values();
      for (std::size_t i = 0; i < gv.size(); ++i)
        if (!(xv[i] > 0.0)) gv[i] = 0.0;
    }
  }
  return g;
}

struct OptimizerConfig {
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::size_t warmup_epochs = 5;
  std::vector<std::size_t> milestones = {120, 160};
  double decay_factor = 0.01;

  void validate() const {
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must lie in (0, 1]");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (milestones[i] <= warmup_epochs) throw ConfigError("milestones must come after warmup");
      if (i && milestones[i] <= milestones[i - 1]) throw ConfigError("milestones must be strictly increasing");
    }
  }
};

// Linear warmup from base_lr/warmup to base_lr, then step decay at milestones.
inline double lr_at(std::size_t epoch, const OptimizerConfig& config) {
  if (epoch < config.warmup_epochs) {
    return config.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(config.warmup_epochs);
  }
  const auto passed = std::count_if(config.milestones.begin(), config.milestones.end(),
                                    [epoch](std::size_t m) { return epoch >= m; });
  return config.base_lr * std::pow(config.decay_factor, static_cast<double>(passed));
}

// buf <- momentum * buf + (grad + weight_decay * value); value <- value - lr * buf.
// A zero learning rate is a no-op; negative or non-finite rates are rejected.
inline void sgd_step(std::span<Parameter* const> params, const OptimizerConfig& config, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be nonnegative and finite");
  if (lr == 0.0) return;
  for (Parameter* p : params) {
    if (!p->has_grad) continue;
    auto v = p->value.values();
    auto g = p->grad.values();
    auto b = p->momentum_buf.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      b[i] = config.momentum * b[i] + (g[i] + config.weight_decay * v[i]);
      v[i] -= lr * b[i];
    }
  }
}

// Row-wise softmax with max subtraction.
inline Tensor softmax(const Tensor& logits) {
  Tensor p = logits;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      s += v;
    }
    for (double& v : row) v /= s;
  }
  return p;
}

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;
};

// Row maximum and log(sum_c exp(z_c - max)). The max term contributes exactly
// 1, so the rest goes through log1p and confident rows keep full precision.
struct ShiftedLogSum {
  double max;
  double log_sum;
};

inline ShiftedLogSum shifted_log_sum(std::span<const double> z) {
  const auto top = std::max_element(z.begin(), z.end());
  double rest = 0.0;
  for (auto it = z.begin(); it != z.end(); ++it)
    if (it != top) rest += std::exp(*it - *top);
  return {*top, std::log1p(rest)};
}

inline void check_labels(std::span<const std::size_t> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) {
    throw DimensionError(std::to_string(labels.size()) + " labels for a batch of " + std::to_string(batch));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " is outside [0, " + std::to_string(classes) + ")");
    }
  }
}

// Mean cross-entropy over the batch. With `sample_weights`, row i's loss and
// gradient are scaled by weight i (still divided by the batch size).
inline LossAndGrad softmax_xent(const Tensor& logits, std::span<const std::size_t> labels,
                                std::span<const double> sample_weights = {}) {
  const std::size_t B = logits.rows(), C = logits.cols();
  check_labels(labels, B, C);
  if (!sample_weights.empty() && sample_weights.size() != B) {
    throw DimensionError("sample weights do not match the batch");
  }
  LossAndGrad out{0.0, Tensor::matrix(B, C)};
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t r = 0; r < B; ++r) {
    auto z = logits.row(r);
    auto g = out.grad.row(r);
    const auto [mx, log_s] = shifted_log_sum(z);
    const double w = sample_weights.empty() ? 1.0 : sample_weights[r];
    out.loss += w * (log_s - (z[labels[r]] - mx));
    for (std::size_t c = 0; c < C; ++c) g[c] = w * std::exp(z[c] - mx - log_s) * inv_b;
    g[labels[r]] -= w * inv_b;
  }
  out.loss *= inv_b;
  return out;
}

// Index of the largest entry per row; ties go to the lowest index.
inline std::vector<std::size_t> argmax_rows(const Tensor& t) {
  std::vector<std::size_t> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace bbn
