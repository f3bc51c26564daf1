#pragma once

// Single-branch training manners (CE / RW / RS), deferred re-balancing
// (DRW / DRS), and the decoupled representation/classifier protocol: train a
// network with one manner, freeze everything below the final layer, retrain a
// fresh final layer with another manner.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bbn/data.hpp"
#include "bbn/nn.hpp"
#include "bbn/sampling.hpp"
#include "bbn/training.hpp"

namespace bbn {

enum class Manner { CE, RW, RS };

inline constexpr std::array<Manner, 3> kAllManners = {Manner::CE, Manner::RW, Manner::RS};

inline std::string_view to_string(Manner m) {
  switch (m) {
    case Manner::CE: return "CE";
    case Manner::RW: return "RW";
    case Manner::RS: return "RS";
  }
  return "?";
}

enum class Rebalance { DRW, DRS };

inline std::string_view to_string(Rebalance r) { return r == Rebalance::DRW ? "CE-DRW" : "CE-DRS"; }

namespace streams {
inline constexpr std::uint64_t kInit = 0x696e6974ULL;
inline constexpr std::uint64_t kSampler = 0x73616d70ULL;
inline constexpr std::uint64_t kClassifier = 0x636c6173ULL;
inline constexpr std::uint64_t kStage2 = 0x73746732ULL;
}  // namespace streams

// Inverse class frequency, rescaled so the mean weight over all N training
// samples is 1: w_i = N / (C * N_i).
inline std::vector<double> reweight_factors(std::span<const std::size_t> class_counts) {
  if (class_counts.empty()) throw DataError("no classes");
  double n = 0.0;
  for (std::size_t i = 0; i < class_counts.size(); ++i) {
    if (class_counts[i] == 0) throw DataError("class " + std::to_string(i) + " has zero samples");
    n += static_cast<double>(class_counts[i]);
  }
  const double c = static_cast<double>(class_counts.size());
  std::vector<double> w;
  w.reserve(class_counts.size());
  for (std::size_t count : class_counts) w.push_back(n / (c * static_cast<double>(count)));
  return w;
}

// Full single-branch network: trunk, one branch block, bias-free classifier.
inline Network make_classifier_net(std::size_t input_dim, std::size_t num_classes, const ModelDims& dims,
                                   std::uint64_t seed) {
  dims.validate();
  std::vector<std::size_t> widths = trunk_widths(input_dim, dims);
  widths.insert(widths.end(), dims.branch.begin(), dims.branch.end());
  widths.push_back(num_classes);
  Rng rng(derive_seed(seed, streams::kInit));
  return Network::mlp(widths, rng, /*relu_on_last=*/false, /*bias_on_last=*/false);
}

// Generic loop: sampler kind + optional per-class loss weights.
inline std::vector<EpochMetrics> train_network(Network& net, const Dataset& ds, SamplerKind sampler_kind,
                                               std::span<const double> class_weights, const TrainOptions& opt,
                                               std::uint64_t sampler_stream = streams::kSampler) {
  opt.validate();
  validate(ds);
  if (!class_weights.empty() && class_weights.size() != ds.num_classes()) {
    throw DimensionError("class weights do not match the class count");
  }
  std::vector<EpochMetrics> history;
  if (opt.epochs == 0) return history;
  Sampler sampler(sampler_kind, ds.labels, ds.num_classes(), derive_seed(opt.seed, sampler_stream));
  const std::size_t steps = steps_per_epoch(ds.size(), opt.batch_size);
  auto params = net.parameters();
  std::vector<std::size_t> y;
  std::vector<double> w;
  Stopwatch clock;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const double lr = opt.lr_for(epoch);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto idx = sampler.next_batch(opt.batch_size);
      const Tensor x = gather_rows(ds.features, idx);
      y.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = ds.labels[idx[i]];
      if (!class_weights.empty()) {
        w.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) w[i] = class_weights[y[i]];
      }
      const Activations acts = forward(net, x);
      const LossAndGrad lg = softmax_xent(acts.back(), y, w);
      require_finite_loss(lg.loss, epoch);
      loss_sum += lg.loss;
      net.zero_grad();
      backward(net, acts, lg.grad);
      sgd_step(params, opt.optimizer, lr);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.alpha = 1.0;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(steps);
    if (opt.eval) m.test_error = error_rate(net, *opt.eval);
    m.wall_ms = clock.elapsed_ms();
    history.push_back(m);
    if (opt.on_epoch) opt.on_epoch(m);
  }
  return history;
}

inline SamplerKind sampler_for(Manner m) { return m == Manner::RS ? SamplerKind::Balanced : SamplerKind::Uniform; }

inline std::vector<double> loss_weights_for(Manner m, std::span<const std::size_t> class_counts) {
  return m == Manner::RW ? reweight_factors(class_counts) : std::vector<double>{};
}

// CE = (uniform, unit weights), RS = (balanced, unit weights), RW = (uniform, reweight_factors).
inline std::vector<EpochMetrics> train_manner(Network& net, const Dataset& ds, Manner manner, const TrainOptions& opt) {
  const auto weights = loss_weights_for(manner, ds.class_counts);
  return train_network(net, ds, sampler_for(manner), weights, opt);
}

// Continue training a CE-trained network with re-weighting (DRW) or
// class-balanced sampling (DRS) at a constant small learning rate.
inline std::vector<EpochMetrics> two_stage_finetune(Network& net, const Dataset& ds, Rebalance rebalance,
                                                    std::size_t stage2_epochs, double stage2_lr,
                                                    TrainOptions opt) {
  opt.epochs = stage2_epochs;
  opt.constant_lr = stage2_lr;
  const Manner m = rebalance == Rebalance::DRW ? Manner::RW : Manner::RS;
  const auto weights = loss_weights_for(m, ds.class_counts);
  return train_network(net, ds, sampler_for(m), weights, opt, streams::kStage2);
}

// Everything below the final affine layer.
inline Network feature_extractor(const Network& net) {
  if (net.depth() < 2 || !std::holds_alternative<Affine>(net.layers().back())) {
    throw StateError("network has no separable final affine classifier");
  }
  Network trunk;
  for (std::size_t k = 0; k + 1 < net.depth(); ++k) trunk.add(net.layers()[k]);
  return trunk;
}

inline const Affine& final_classifier(const Network& net) {
  if (net.empty() || !std::holds_alternative<Affine>(net.layers().back())) {
    throw StateError("network does not end in an affine classifier");
  }
  return std::get<Affine>(net.layers().back());
}

inline Dataset with_features(const Dataset& ds, Tensor features) {
  Dataset out;
  out.features = std::move(features);
  out.labels = ds.labels;
  out.class_counts = ds.class_counts;
  return out;
}

struct RetrainResult {
  Network classifier;  // a single bias-free affine layer
  double test_error = 0.0;
};

// Trains a fresh bias-free classifier on precomputed (frozen) features.
inline RetrainResult retrain_classifier_on_features(const Dataset& train_features, const Dataset& test_features,
                                                    Manner manner, TrainOptions opt) {
  Rng rng(derive_seed(opt.seed, streams::kClassifier));
  RetrainResult out;
  out.classifier.add_affine(train_features.dim(), train_features.num_classes(), rng, /*with_bias=*/false);
  opt.eval = nullptr;
  train_manner(out.classifier, train_features, manner, opt);
  out.test_error = error_rate(out.classifier, test_features);
  return out;
}

// Freezes the trained network's feature extractor and retrains the final
// layer from scratch. `trained_net` is never modified.
inline RetrainResult freeze_and_retrain_classifier(const Network& trained_net, Manner classifier_manner,
                                                   const Dataset& train_ds, const Dataset& test_ds,
                                                   const TrainOptions& opt) {
  const Network trunk = feature_extractor(trained_net);
  return retrain_classifier_on_features(with_features(train_ds, predict(trunk, train_ds.features)),
                                        with_features(test_ds, predict(trunk, test_ds.features)),
                                        classifier_manner, opt);
}

// Frozen trunk trained on dataset A, classifier retrained and evaluated on B.
inline double cross_dataset_transfer(const Network& trained_net_on_a, const Dataset& train_b, const Dataset& test_b,
                                     Manner classifier_manner, const TrainOptions& opt) {
  if (trained_net_on_a.input_width() != train_b.dim() || test_b.dim() != train_b.dim()) {
    throw ConfigError("dataset B has width " + std::to_string(train_b.dim()) + " but the transferred trunk expects " +
                      std::to_string(trained_net_on_a.input_width()));
  }
  if (test_b.num_classes() != train_b.num_classes()) throw ConfigError("B train/test class counts differ");
  return freeze_and_retrain_classifier(trained_net_on_a, classifier_manner, train_b, test_b, opt).test_error;
}

struct DecoupleGridConfig {
  ModelDims dims;
  TrainOptions stage1;   // representation learning
  TrainOptions retrain;  // classifier retraining; seed is overridden per run
};

using ErrorGrid = std::array<std::array<double, 3>, 3>;

struct DecoupleGridResult {
  // error[representation][classifier], indices follow kAllManners.
  ErrorGrid error{};
  std::vector<ErrorGrid> per_seed;
  std::vector<std::uint64_t> seeds;
  double runtime_ms = 0.0;
};

inline std::size_t manner_index(Manner m) { return static_cast<std::size_t>(m); }

// Stage 1 for each representation manner, then stage 2 for each classifier
// manner on the frozen features; errors averaged over seeds.
inline DecoupleGridResult decouple_grid(const Dataset& train_ds, const Dataset& test_ds, const DecoupleGridConfig& config,
                                        std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("decouple_grid needs at least one seed");
  Stopwatch clock;
  DecoupleGridResult result;
  result.seeds.assign(seeds.begin(), seeds.end());
  for (std::uint64_t seed : seeds) {
    ErrorGrid cell{};
    for (Manner rep : kAllManners) {
      TrainOptions s1 = config.stage1;
      s1.seed = seed;
      s1.eval = nullptr;
      s1.on_epoch = nullptr;
      Network net = make_classifier_net(train_ds.dim(), train_ds.num_classes(), config.dims, seed);
      train_manner(net, train_ds, rep, s1);
      const Network trunk = feature_extractor(net);
      const Dataset train_f = with_features(train_ds, predict(trunk, train_ds.features));
      const Dataset test_f = with_features(test_ds, predict(trunk, test_ds.features));
      for (Manner cls : kAllManners) {
        TrainOptions s2 = config.retrain;
        s2.seed = seed;
        s2.on_epoch = nullptr;
        cell[manner_index(rep)][manner_index(cls)] = retrain_classifier_on_features(train_f, test_f, cls, s2).test_error;
      }
    }
    result.per_seed.push_back(cell);
  }
  for (const auto& g : result.per_seed)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) result.error[r][c] += g[r][c] / static_cast<double>(seeds.size());
  result.runtime_ms = clock.elapsed_ms();
  return result;
}

}  // namespace bbn
