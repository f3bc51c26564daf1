#pragma once

// Bilateral-branch network. A shared trunk feeds two branch blocks; the
// conventional branch sees uniformly sampled batches, the re-balancing branch
// sees reversed-sampler batches. Per epoch an adaptor produces alpha, the
// branch features are scaled by alpha and (1 - alpha) before their
// classifiers W_c and W_r, the logits are summed, and the loss is the
// alpha-weighted cross-entropy against both label sets.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bbn/baselines.hpp"
#include "bbn/binary_io.hpp"
#include "bbn/data.hpp"
#include "bbn/nn.hpp"
#include "bbn/sampling.hpp"
#include "bbn/training.hpp"

namespace bbn {

enum class AdaptorKind {
  EqualWeight,
  BetaDist,
  ParabolicIncrement,
  LinearDecay,
  CosineDecay,
  ParabolicDecay,
  Constant,  // alpha pinned to AdaptorSchedule::value
};

inline constexpr std::array<AdaptorKind, 6> kAdaptorStrategies = {
    AdaptorKind::EqualWeight, AdaptorKind::BetaDist,    AdaptorKind::ParabolicIncrement,
    AdaptorKind::LinearDecay, AdaptorKind::CosineDecay, AdaptorKind::ParabolicDecay};

inline std::string_view to_string(AdaptorKind k) {
  switch (k) {
    case AdaptorKind::EqualWeight: return "Equal weight";
    case AdaptorKind::BetaDist: return "Beta distribution";
    case AdaptorKind::ParabolicIncrement: return "Parabolic increment";
    case AdaptorKind::LinearDecay: return "Linear decay";
    case AdaptorKind::CosineDecay: return "Cosine decay";
    case AdaptorKind::ParabolicDecay: return "Parabolic decay";
    case AdaptorKind::Constant: return "Constant";
  }
  return "?";
}

struct AdaptorSchedule {
  AdaptorKind kind = AdaptorKind::ParabolicDecay;
  double value = 0.5;  // Constant only
  double beta_a = 0.2;  // BetaDist only
  double beta_b = 0.2;

  static AdaptorSchedule constant(double alpha) { return {AdaptorKind::Constant, alpha}; }
};

// alpha for epoch T of T_max. BetaDist draws a fresh value from `rng` on
// every call, so callers invoke it once per epoch.
inline double alpha_at(std::size_t T, std::size_t T_max, const AdaptorSchedule& schedule, Rng* rng = nullptr) {
  if (T_max == 0) throw ConfigError("T_max must be positive");
  if (T > T_max) throw ConfigError("epoch " + std::to_string(T) + " exceeds T_max " + std::to_string(T_max));
  const double r = static_cast<double>(T) / static_cast<double>(T_max);
  switch (schedule.kind) {
    case AdaptorKind::EqualWeight: return 0.5;
    case AdaptorKind::BetaDist:
      if (!rng) throw ConfigError("the Beta adaptor needs a random stream");
      return rng->beta(schedule.beta_a, schedule.beta_b);
    case AdaptorKind::ParabolicIncrement: return r * r;
    case AdaptorKind::LinearDecay: return 1.0 - r;
    case AdaptorKind::CosineDecay: return std::cos(r * std::numbers::pi / 2.0);
    case AdaptorKind::ParabolicDecay: return 1.0 - r * r;
    case AdaptorKind::Constant:
      if (!(schedule.value >= 0.0 && schedule.value <= 1.0)) throw ConfigError("constant alpha outside [0, 1]");
      return schedule.value;
  }
  throw ConfigError("unknown adaptor");
}

struct BBNModel {
  Network trunk;
  Network branch_c;
  Network branch_r;
  Parameter W_c;  // D x C
  Parameter W_r;  // D x C

  std::size_t input_dim() const { return trunk.input_width(); }
  std::size_t feature_dim() const { return W_c.value.rows(); }
  std::size_t num_classes() const { return W_c.value.cols(); }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = trunk.parameters();
    for (Parameter* p : branch_c.parameters()) out.push_back(p);
    for (Parameter* p : branch_r.parameters()) out.push_back(p);
    out.push_back(&W_c);
    out.push_back(&W_r);
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out = trunk.parameters();
    for (const Parameter* p : branch_c.parameters()) out.push_back(p);
    for (const Parameter* p : branch_r.parameters()) out.push_back(p);
    out.push_back(&W_c);
    out.push_back(&W_r);
    return out;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  bool operator==(const BBNModel& other) const {
    auto a = parameters();
    auto b = other.parameters();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i]->value != b[i]->value) return false;
    return true;
  }
};

namespace streams {
inline constexpr std::uint64_t kBranchC = 0x62726363ULL;
inline constexpr std::uint64_t kBranchR = 0x62726372ULL;
inline constexpr std::uint64_t kConventional = 0x636f6e76ULL;
inline constexpr std::uint64_t kRebalancing = 0x72656261ULL;
inline constexpr std::uint64_t kAlpha = 0x616c7068ULL;
}  // namespace streams

inline Parameter make_classifier_weight(std::size_t d, std::size_t c, Rng& rng) {
  return make_affine(d, c, rng, false).weight;
}

// Branches and classifiers come from independent seeded streams.
inline BBNModel make_bbn_model(std::size_t input_dim, std::size_t num_classes, const ModelDims& dims,
                               std::uint64_t seed) {
  dims.validate();
  if (dims.branch.empty()) throw ConfigError("each branch needs at least one layer");
  BBNModel m;
  Rng trunk_rng(derive_seed(seed, streams::kInit));
  m.trunk = Network::mlp(trunk_widths(input_dim, dims), trunk_rng, true);
  const auto bw = branch_widths(dims);
  Rng rc(derive_seed(seed, streams::kBranchC));
  m.branch_c = Network::mlp(bw, rc, true);
  m.W_c = make_classifier_weight(dims.feature_dim(), num_classes, rc);
  Rng rr(derive_seed(seed, streams::kBranchR));
  m.branch_r = Network::mlp(bw, rr, true);
  m.W_r = make_classifier_weight(dims.feature_dim(), num_classes, rr);
  return m;
}

struct BilateralForward {
  Activations trunk_c, branch_c, trunk_r, branch_r;

  const Tensor& f_c() const { return branch_c.back(); }
  const Tensor& f_r() const { return branch_r.back(); }
};

inline BilateralForward forward_bilateral(const BBNModel& model, const Tensor& x_c, const Tensor& x_r) {
  if (x_c.shape() != x_r.shape()) {
    throw DimensionError("bilateral batches differ: " + shape_string(x_c.shape()) + " vs " + shape_string(x_r.shape()));
  }
  BilateralForward out;
  out.trunk_c = forward(model.trunk, x_c);
  out.branch_c = forward(model.branch_c, out.trunk_c.back());
  out.trunk_r = forward(model.trunk, x_r);
  out.branch_r = forward(model.branch_r, out.trunk_r.back());
  return out;
}

// z = (alpha f_c) W_c + ((1 - alpha) f_r) W_r; row-vector form of W^T f.
inline Tensor aggregate_logits(const Tensor& f_c, const Tensor& f_r, const Tensor& W_c, const Tensor& W_r,
                               double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha outside [0, 1]");
  Tensor z = matmul(scaled(f_c, alpha), W_c);
  const Tensor zr = matmul(scaled(f_r, 1.0 - alpha), W_r);
  if (z.shape() != zr.shape()) throw DimensionError("branch logits differ in shape");
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += zr[i];
  return z;
}

// L = alpha * CE(softmax(z), y_c) + (1 - alpha) * CE(softmax(z), y_r), batch mean.
inline LossAndGrad bbn_loss(const Tensor& z, std::span<const std::size_t> y_c, std::span<const std::size_t> y_r,
                            double alpha) {
  const std::size_t B = z.rows(), C = z.cols();
  check_labels(y_c, B, C);
  check_labels(y_r, B, C);
  LossAndGrad out{0.0, Tensor::matrix(B, C)};
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t r = 0; r < B; ++r) {
    auto zr = z.row(r);
    auto g = out.grad.row(r);
    const auto [mx, log_s] = shifted_log_sum(zr);
    const double ce_c = log_s - (zr[y_c[r]] - mx);
    const double ce_r = log_s - (zr[y_r[r]] - mx);
    out.loss += alpha * ce_c + (1.0 - alpha) * ce_r;
    for (std::size_t c = 0; c < C; ++c) g[c] = std::exp(zr[c] - mx - log_s) * inv_b;
    g[y_c[r]] -= alpha * inv_b;
    g[y_r[r]] -= (1.0 - alpha) * inv_b;
  }
  out.loss *= inv_b;
  return out;
}

// Reverse pass through the aggregation, both branches and the shared trunk.
// A branch whose weight factor is exactly zero is skipped, so it (and its
// classifier) receives no gradient at all.
inline void backward_bilateral(BBNModel& model, const BilateralForward& fwd, const Tensor& grad_z, double alpha) {
  auto one_side = [&](double factor, const Tensor& f, Parameter& W, Network& branch, const Activations& branch_acts,
                      const Activations& trunk_acts) {
    if (factor == 0.0) return;
    const Tensor fs = scaled(f, factor);
    W.accumulate(matmul_tn(fs, grad_z));
    const Tensor g_f = scaled(matmul_nt(grad_z, W.value), factor);
    const Tensor g_trunk_out = backward(branch, branch_acts, g_f);
    backward(model.trunk, trunk_acts, g_trunk_out);
  };
  one_side(alpha, fwd.f_c(), model.W_c, model.branch_c, fwd.branch_c, fwd.trunk_c);
  one_side(1.0 - alpha, fwd.f_r(), model.W_r, model.branch_r, fwd.branch_r, fwd.trunk_r);
}

struct BBNTrainConfig {
  std::size_t T_max = 60;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;
  AdaptorSchedule schedule;
  // Sampler feeding the re-balancing branch; Reversed is the method itself,
  // the others exist for the sampler ablation.
  SamplerKind rebalancing_sampler = SamplerKind::Reversed;
  std::uint64_t seed = 0;

  void validate() const {
    if (T_max < 1) throw ConfigError("T_max must be at least 1");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    optimizer.validate();
  }
};

inline double error_rate(const BBNModel& model, const Dataset& ds);

// Epoch e (0-based) runs with alpha = alpha_at(e + 1, T_max), so the final
// epoch reaches T = T_max. Each step pairs a uniform batch with an
// equally sized re-balancing batch.
inline std::vector<EpochMetrics> train_bbn(BBNModel& model, const Dataset& ds, const BBNTrainConfig& config,
                                           const Dataset* eval = nullptr, const EpochCallback& on_epoch = nullptr) {
  config.validate();
  validate(ds);
  if (ds.dim() != model.input_dim()) throw DimensionError("dataset width does not match the model input");
  if (ds.num_classes() != model.num_classes()) throw DimensionError("dataset classes do not match the model");
  Sampler conventional(SamplerKind::Uniform, ds.labels, ds.num_classes(),
                       derive_seed(config.seed, streams::kConventional));
  Sampler rebalancing(config.rebalancing_sampler, ds.labels, ds.num_classes(),
                      derive_seed(config.seed, streams::kRebalancing));
  Rng alpha_rng(derive_seed(config.seed, streams::kAlpha));
  const std::size_t steps = steps_per_epoch(ds.size(), config.batch_size);
  auto params = model.parameters();
  std::vector<EpochMetrics> history;
  std::vector<std::size_t> y_c, y_r;
  Stopwatch clock;
  for (std::size_t epoch = 0; epoch < config.T_max; ++epoch) {
    const double alpha = alpha_at(epoch + 1, config.T_max, config.schedule, &alpha_rng);
    const double lr = lr_at(epoch, config.optimizer);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto idx_c = conventional.next_batch(config.batch_size);
      std::vector<std::size_t> idx_r;
      if (rebalancing.kind() == SamplerKind::Uniform) {
        // A uniform stream may hand back a short epoch tail; top it up so the
        // two batches pair row by row.
        while (idx_r.size() < idx_c.size()) {
          auto more = rebalancing.next_batch(idx_c.size() - idx_r.size());
          idx_r.insert(idx_r.end(), more.begin(), more.end());
        }
      } else {
        idx_r = rebalancing.next_batch(idx_c.size());
      }
      y_c.resize(idx_c.size());
      y_r.resize(idx_r.size());
      for (std::size_t i = 0; i < idx_c.size(); ++i) y_c[i] = ds.labels[idx_c[i]];
      for (std::size_t i = 0; i < idx_r.size(); ++i) y_r[i] = ds.labels[idx_r[i]];
      const auto fwd = forward_bilateral(model, gather_rows(ds.features, idx_c), gather_rows(ds.features, idx_r));
      const Tensor z = aggregate_logits(fwd.f_c(), fwd.f_r(), model.W_c.value, model.W_r.value, alpha);
      const LossAndGrad lg = bbn_loss(z, y_c, y_r, alpha);
      require_finite_loss(lg.loss, epoch);
      loss_sum += lg.loss;
      model.zero_grad();
      backward_bilateral(model, fwd, lg.grad, alpha);
      sgd_step(params, config.optimizer, lr);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.alpha = alpha;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(steps);
    if (eval) m.test_error = error_rate(model, *eval);
    m.wall_ms = clock.elapsed_ms();
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

struct Inference {
  std::vector<std::size_t> labels;
  Tensor probabilities;  // B x C
  Tensor logits;         // B x C
};

// alpha fixed to 0.5; ties resolve to the lowest class index.
inline Inference infer(const BBNModel& model, const Tensor& x) {
  const Tensor f_c = predict(model.branch_c, predict(model.trunk, x));
  const Tensor f_r = predict(model.branch_r, predict(model.trunk, x));
  Inference out;
  out.logits = aggregate_logits(f_c, f_r, model.W_c.value, model.W_r.value, 0.5);
  out.probabilities = softmax(out.logits);
  out.labels = argmax_rows(out.logits);
  return out;
}

inline double error_rate(const BBNModel& model, const Dataset& ds) {
  return error_rate(infer(model, ds.features).labels, ds.labels);
}

// 0.5 * (W_c + W_r): the classifier the inference rule applies when both
// branches emit the same feature.
inline Tensor combined_classifier(const BBNModel& model) {
  Tensor out = model.W_c.value;
  const auto r = model.W_r.value.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = 0.5 * o[i] + 0.5 * r[i];
  return out;
}

// Trunk followed by one branch; used to freeze a branch's representation.
inline Network branch_feature_extractor(const BBNModel& model, bool conventional) {
  Network out = model.trunk;
  for (const Layer& l : (conventional ? model.branch_c : model.branch_r).layers()) out.add(l);
  return out;
}

// ---- checkpoint format -----------------------------------------------------
// "BBNM", u32 version = 1, u64 input_dim, u64 #trunk widths, widths...,
// u64 #branch widths, widths..., u64 C, then every parameter value in
// declaration order (trunk, branch_c, branch_r, W_c, W_r) as f64.

inline ModelDims model_dims(const BBNModel& model) {
  ModelDims dims;
  dims.trunk.clear();
  dims.branch.clear();
  for (const auto& l : model.trunk.layers())
    if (const auto* a = std::get_if<Affine>(&l)) dims.trunk.push_back(a->out_dim);
  for (const auto& l : model.branch_c.layers())
    if (const auto* a = std::get_if<Affine>(&l)) dims.branch.push_back(a->out_dim);
  return dims;
}

inline std::string encode_model(const BBNModel& model) {
  const ModelDims dims = model_dims(model);
  io::ByteWriter w;
  w.magic("BBNM");
  w.u32(1);
  w.u64(model.input_dim());
  w.u64(dims.trunk.size());
  for (std::size_t v : dims.trunk) w.u64(v);
  w.u64(dims.branch.size());
  for (std::size_t v : dims.branch) w.u64(v);
  w.u64(model.num_classes());
  for (const Parameter* p : model.parameters())
    for (double v : p->value.values()) w.f64(v);
  return w.bytes();
}

inline BBNModel decode_model(std::string_view bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("BBNM");
  const std::size_t version_at = r.offset();
  if (const auto version = r.u32("version"); version != 1) {
    throw ParseError("unsupported BBNM version " + std::to_string(version), version_at);
  }
  auto dim = [&](const char* what) {
    const std::size_t at = r.offset();
    const std::uint64_t v = r.u64(what);
    if (v == 0 || v > (1u << 24)) throw ParseError(std::string("implausible ") + what, at);
    return static_cast<std::size_t>(v);
  };
  auto list = [&](const char* what) {
    const std::size_t at = r.offset();
    const std::uint64_t n = r.u64(what);
    if (n == 0 || n > 64) throw ParseError(std::string("implausible layer count for ") + what, at);
    std::vector<std::size_t> out;
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(dim(what));
    return out;
  };
  const std::size_t input_dim = dim("input_dim");
  ModelDims dims;
  dims.trunk = list("trunk widths");
  dims.branch = list("branch widths");
  const std::size_t C = dim("num_classes");
  BBNModel m = make_bbn_model(input_dim, C, dims, 0);
  for (Parameter* p : m.parameters()) {
    r.need_items(p->value.size(), 8, "parameters");
    for (double& v : p->value.values()) v = r.f64("parameters");
  }
  r.expect_end();
  return m;
}

inline void save_model(const BBNModel& model, const std::string& path) { io::write_file(path, encode_model(model)); }

inline BBNModel load_model(const std::string& path) { return decode_model(io::read_file(path)); }

}  // namespace bbn
