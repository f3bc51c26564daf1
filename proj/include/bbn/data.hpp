#pragma once

// Synthetic long-tailed datasets and the LTDS binary format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bbn/binary_io.hpp"
#include "bbn/errors.hpp"
#include "bbn/random.hpp"
#include "bbn/tensor.hpp"

namespace bbn {

struct ImbalanceProfile {
  std::size_t num_classes = 10;
  std::size_t n_max = 500;
  double beta = 50.0;  // N_max / N_min
};

// N_i = round_half_up(n_max * beta^(-i/(C-1))), at least 1.
inline std::vector<std::size_t> make_counts(const ImbalanceProfile& profile) {
  if (!(profile.beta >= 1.0) || !std::isfinite(profile.beta)) throw ConfigError("imbalance factor beta must be >= 1");
  if (profile.num_classes < 2) throw ConfigError("need at least two classes");
  if (profile.n_max < 1) throw ConfigError("n_max must be positive");
  const std::size_t C = profile.num_classes;
  std::vector<std::size_t> counts(C);
  for (std::size_t i = 0; i < C; ++i) {
    const double exponent = -static_cast<double>(i) / static_cast<double>(C - 1);
    const double n = static_cast<double>(profile.n_max) * std::pow(profile.beta, exponent);
    counts[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n + 0.5)));
  }
  counts[0] = profile.n_max;
  return counts;
}

struct Dataset {
  Tensor features;                       // N x d
  std::vector<std::size_t> labels;       // N, each in [0, C)
  std::vector<std::size_t> class_counts; // C

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t num_classes() const noexcept { return class_counts.size(); }

  // Per-class sample indices, each list in ascending order.
  std::vector<std::vector<std::size_t>> class_indices() const {
    std::vector<std::vector<std::size_t>> out(num_classes());
    for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
    return out;
  }

  bool operator==(const Dataset&) const = default;
};

inline std::vector<std::size_t> count_labels(std::span<const std::size_t> labels, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t y : labels) {
    if (y >= num_classes) throw DataError("label " + std::to_string(y) + " out of range");
    ++counts[y];
  }
  return counts;
}

// Throws DataError unless the dataset satisfies its invariants.
inline void validate(const Dataset& ds) {
  if (ds.features.rank() != 2 || ds.features.rows() != ds.labels.size()) {
    throw DataError("feature rows do not match label count");
  }
  if (count_labels(ds.labels, ds.num_classes()) != ds.class_counts) {
    throw DataError("class_counts disagree with labels");
  }
  for (std::size_t i = 0; i < ds.class_counts.size(); ++i) {
    if (ds.class_counts[i] == 0) throw DataError("class " + std::to_string(i) + " has no samples");
  }
}

// Class-conditional isotropic Gaussians: class i ~ N(class_means[i], noise_scale^2 I).
struct SyntheticSpec {
  Tensor class_means;  // C x d
  double noise_scale = 1.0;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return class_means.rows(); }
  std::size_t dim() const { return class_means.cols(); }

  // Means are drawn in a random `latent_dim`-dimensional subspace of R^dim
  // (latent_dim == 0 means the full space) and rescaled to norm `radius`.
  // Noise is isotropic in all dim coordinates, so with latent_dim < dim
  // every class shares the same discriminative subspace.
  static SyntheticSpec random(std::size_t num_classes, std::size_t dim, double radius, double noise_scale,
                              std::uint64_t seed, std::size_t latent_dim = 0) {
    if (latent_dim == 0 || latent_dim > dim) latent_dim = dim;
    Rng rng(derive_seed(seed, 0x6d65616e73ULL));
    // Orthonormal basis of the subspace (Gram-Schmidt on Gaussian vectors).
    Tensor basis = Tensor::matrix(latent_dim, dim);
    for (std::size_t k = 0; k < latent_dim; ++k) {
      auto b = basis.row(k);
      for (;;) {
        for (double& v : b) v = rng.normal();
        for (std::size_t q = 0; q < k; ++q) {
          auto prev = basis.row(q);
          double dot = 0.0;
          for (std::size_t j = 0; j < dim; ++j) dot += b[j] * prev[j];
          for (std::size_t j = 0; j < dim; ++j) b[j] -= dot * prev[j];
        }
        double n2 = 0.0;
        for (double v : b) n2 += v * v;
        if (n2 > 1e-12) {
          for (double& v : b) v /= std::sqrt(n2);
          break;
        }
      }
    }
    SyntheticSpec spec;
    spec.class_means = Tensor::matrix(num_classes, dim);
    spec.noise_scale = noise_scale;
    spec.seed = seed;
    std::vector<double> z(latent_dim);
    for (std::size_t c = 0; c < num_classes; ++c) {
      double n2 = 0.0;
      for (double& v : z) {
        v = rng.normal();
        n2 += v * v;
      }
      const double s = radius / std::sqrt(n2);
      auto row = spec.class_means.row(c);
      for (std::size_t k = 0; k < latent_dim; ++k)
        for (std::size_t j = 0; j < dim; ++j) row[j] += s * z[k] * basis.at(k, j);
    }
    return spec;
  }
};

namespace detail {

inline constexpr std::uint64_t kTrainStream = 0x747261696eULL;
inline constexpr std::uint64_t kTestStream = 0x74657374ULL;

inline Dataset draw_gaussians(const SyntheticSpec& spec, std::span<const std::size_t> counts, std::uint64_t stream) {
  if (counts.size() != spec.num_classes()) {
    throw DimensionError(std::to_string(counts.size()) + " counts for " + std::to_string(spec.num_classes()) +
                         " class means");
  }
  if (!(spec.noise_scale >= 0.0)) throw ConfigError("noise_scale must be nonnegative");
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  const std::size_t d = spec.dim();
  Dataset ds;
  ds.features = Tensor::matrix(n, d);
  ds.labels.reserve(n);
  ds.class_counts.assign(counts.begin(), counts.end());
  Rng rng(derive_seed(spec.seed, stream));
  std::size_t r = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const auto mean = spec.class_means.row(c);
    for (std::size_t k = 0; k < counts[c]; ++k, ++r) {
      auto row = ds.features.row(r);
      for (std::size_t j = 0; j < d; ++j) row[j] = mean[j] + spec.noise_scale * rng.normal();
      ds.labels.push_back(c);
    }
  }
  return ds;
}

}  // namespace detail

// Class-major layout: all samples of class 0, then class 1, ...
inline Dataset synth_dataset(const SyntheticSpec& spec, std::span<const std::size_t> counts) {
  return detail::draw_gaussians(spec, counts, detail::kTrainStream);
}

// Balanced split drawn from a stream independent of synth_dataset's.
inline Dataset make_balanced_test(const SyntheticSpec& spec, std::size_t per_class) {
  const std::vector<std::size_t> counts(spec.num_classes(), per_class);
  return detail::draw_gaussians(spec, counts, detail::kTestStream);
}

// LTDS v1: "LTDS", u32 version, u64 N, u64 d, u64 C, N*d f64, N u32 labels.
inline std::string encode_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.magic("LTDS");
  w.u32(1);
  w.u64(ds.size());
  w.u64(ds.dim());
  w.u64(ds.num_classes());
  for (double v : ds.features.values()) w.f64(v);
  for (std::size_t y : ds.labels) w.u32(static_cast<std::uint32_t>(y));
  return w.bytes();
}

inline Dataset decode_dataset(std::string_view bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("LTDS");
  const std::size_t version_at = r.offset();
  if (const auto version = r.u32("version"); version != 1) {
    throw ParseError("unsupported LTDS version " + std::to_string(version), version_at);
  }
  const std::uint64_t n = r.u64("N");
  const std::uint64_t d = r.u64("d");
  const std::size_t c_at = r.offset();
  const std::uint64_t C = r.u64("C");
  if (C == 0) throw ParseError("class count must be positive", c_at);
  if (d != 0) r.need_items(n, 8 * d, "features");
  Dataset ds;
  ds.features = Tensor::matrix(n, d);
  for (double& v : ds.features.values()) v = r.f64("features");
  r.need_items(n, 4, "labels");
  ds.labels.resize(n);
  ds.class_counts.assign(C, 0);
  for (auto& y : ds.labels) {
    const std::size_t at = r.offset();
    y = r.u32("labels");
    if (y >= C) throw ParseError("label " + std::to_string(y) + " >= C=" + std::to_string(C), at);
    ++ds.class_counts[y];
  }
  r.expect_end();
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) { io::write_file(path, encode_dataset(ds)); }

inline Dataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

}  // namespace bbn
