#pragma once

// Test-only helpers: random network generation and a central-difference
// gradient oracle that never touches the analytic backward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "bbn/nn.hpp"

namespace bbn::testing {

inline Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

// Redraws every parameter (biases included) so no ReLU input sits exactly on
// the kink, where central differences do not estimate the gradient.
template <class Model>
void randomize_parameters(Model& model, Rng& rng, double scale = 0.8) {
  for (Parameter* p : model.parameters())
    for (double& v : p->value.values()) v = rng.normal() * scale;
}

// Affine stack with ReLUs between layers; biases randomized so ReLU
// boundaries are generic.
inline Network random_network(Rng& rng, std::size_t depth, std::size_t max_width, std::size_t& in_dim) {
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i <= depth; ++i) widths.push_back(1 + rng.below(max_width));
  in_dim = widths.front();
  Network net = Network::mlp(widths, rng, false);
  randomize_parameters(net, rng);
  return net;
}

// |a - n| / max(|a|, |n|, floor): relative error, with a floor so entries
// whose true gradient is ~0 compare on an absolute scale.
inline double rel_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences of `loss` with respect to every entry of `values`.
inline std::vector<double> numeric_gradient(std::span<double> values, const std::function<double()>& loss,
                                            double h = 1e-5) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double up = loss();
    values[i] = orig - h;
    const double down = loss();
    values[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_rel_error(std::span<const double> analytic, std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, rel_error(analytic[i], numeric[i]));
  return worst;
}

}  // namespace bbn::testing
