#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bbn/data.hpp"
#include "bbn/nn.hpp"

namespace bbn {

struct EpochMetrics {
  std::size_t epoch = 0;
  double alpha = 1.0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> test_error;
  double wall_ms = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Shared knobs for every single-network training loop.
struct TrainOptions {
  OptimizerConfig optimizer;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  // Overrides the warmup/step schedule with a constant rate when set.
  std::optional<double> constant_lr;
  // Evaluated after every epoch when non-null.
  const Dataset* eval = nullptr;
  EpochCallback on_epoch;

  double lr_for(std::size_t epoch) const { return constant_lr ? *constant_lr : lr_at(epoch, optimizer); }

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!constant_lr) optimizer.validate();
  }
};

// Hidden widths of the desk-scale architecture. The shared trunk is
// input -> trunk[0] -> ... (ReLU after each), a branch block continues
// trunk.back() -> branch[0] -> ... (ReLU after each), and branch.back() is
// the feature dimension D seen by the classifier.
struct ModelDims {
  std::vector<std::size_t> trunk = {64, 64};
  std::vector<std::size_t> branch = {32};

  std::size_t feature_dim() const { return branch.empty() ? trunk.back() : branch.back(); }

  void validate() const {
    if (trunk.empty()) throw ConfigError("trunk needs at least one hidden layer");
    for (std::size_t w : trunk) if (w == 0) throw ConfigError("zero trunk width");
    for (std::size_t w : branch) if (w == 0) throw ConfigError("zero branch width");
  }
};

inline std::vector<std::size_t> trunk_widths(std::size_t input_dim, const ModelDims& dims) {
  std::vector<std::size_t> w{input_dim};
  w.insert(w.end(), dims.trunk.begin(), dims.trunk.end());
  return w;
}

inline std::vector<std::size_t> branch_widths(const ModelDims& dims) {
  std::vector<std::size_t> w{dims.trunk.back()};
  w.insert(w.end(), dims.branch.begin(), dims.branch.end());
  return w;
}


inline double error_rate(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
  if (predicted.size() != labels.size()) throw DimensionError("prediction/label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += predicted[i] != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

inline double error_rate(const Network& net, const Dataset& ds) {
  return error_rate(argmax_rows(predict(net, ds.features)), ds.labels);
}

inline void require_finite_loss(double loss, std::size_t epoch) {
  if (!std::isfinite(loss)) throw NumericError("non-finite training loss in epoch " + std::to_string(epoch));
}

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

class Stopwatch {
 public:
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace bbn
