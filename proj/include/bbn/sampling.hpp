#pragma once

// Mini-batch index streams: the uniform sampler (each sample once per epoch),
// the class-balanced sampler, and the reversed sampler whose class
// probabilities are proportional to N_max / N_i.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

#include "bbn/errors.hpp"
#include "bbn/random.hpp"

namespace bbn {

struct ClassWeights {
  std::vector<double> w;
  std::vector<double> P;
};

// w_i = max_j N_j / N_i, P_i = w_i / sum_j w_j.
inline ClassWeights reversed_probs(std::span<const std::size_t> class_counts) {
  if (class_counts.empty()) throw DataError("no classes");
  for (std::size_t i = 0; i < class_counts.size(); ++i) {
    if (class_counts[i] == 0) throw DataError("class " + std::to_string(i) + " has zero samples");
  }
  const double n_max = static_cast<double>(*std::max_element(class_counts.begin(), class_counts.end()));
  ClassWeights out;
  out.w.reserve(class_counts.size());
  for (std::size_t n : class_counts) out.w.push_back(n_max / static_cast<double>(n));
  const double total = std::accumulate(out.w.begin(), out.w.end(), 0.0);
  for (double w : out.w) out.P.push_back(w / total);
  return out;
}

enum class SamplerKind { Uniform, Balanced, Reversed };

inline std::string_view to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::Uniform: return "Uniform";
    case SamplerKind::Balanced: return "Balanced";
    case SamplerKind::Reversed: return "Reversed";
  }
  return "?";
}

class Sampler {
 public:
  Sampler(SamplerKind kind, std::span<const std::size_t> labels, std::size_t num_classes, std::uint64_t seed)
      : kind_(kind), seed_(seed), n_(labels.size()), rng_(seed), class_index_lists_(num_classes) {
    if (labels.empty()) throw DataError("cannot sample from an empty dataset");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= num_classes) throw DataError("label out of range in sampler");
      class_index_lists_[labels[i]].push_back(i);
    }
    std::vector<std::size_t> counts;
    for (const auto& l : class_index_lists_) counts.push_back(l.size());
    switch (kind_) {
      case SamplerKind::Uniform:
        permutation_.resize(n_);
        reshuffle();
        break;
      case SamplerKind::Balanced:
        for (std::size_t i = 0; i < num_classes; ++i) {
          if (counts[i] == 0) throw DataError("class " + std::to_string(i) + " has zero samples");
        }
        set_class_probs(std::vector<double>(num_classes, 1.0 / static_cast<double>(num_classes)));
        break;
      case SamplerKind::Reversed:
        set_class_probs(reversed_probs(counts).P);
        break;
    }
  }

  SamplerKind kind() const noexcept { return kind_; }
  std::size_t epoch() const noexcept { return epoch_; }
  const std::vector<std::vector<std::size_t>>& class_index_lists() const noexcept { return class_index_lists_; }
  const std::vector<double>& class_probs() const noexcept { return probs_; }
  const std::vector<std::size_t>& epoch_permutation() const noexcept { return permutation_; }

  std::vector<std::size_t> next_batch(std::size_t batch_size) {
    return kind_ == SamplerKind::Uniform ? next_batch_uniform(batch_size) : next_batch_by_class(batch_size);
  }

  // Walks the epoch permutation; never crosses an epoch boundary, so the
  // last batch of an epoch may be short.
  std::vector<std::size_t> next_batch_uniform(std::size_t batch_size) {
    if (kind_ != SamplerKind::Uniform) throw StateError("next_batch_uniform on a class-driven sampler");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (cursor_ == n_) {
      ++epoch_;
      cursor_ = 0;
      reshuffle();
    }
    const std::size_t take = std::min(batch_size, n_ - cursor_);
    std::vector<std::size_t> out(permutation_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 permutation_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
    cursor_ += take;
    return out;
  }

  std::vector<std::size_t> next_batch_balanced(std::size_t batch_size) {
    if (kind_ != SamplerKind::Balanced) throw StateError("next_batch_balanced on a non-balanced sampler");
    return next_batch_by_class(batch_size);
  }

  std::vector<std::size_t> next_batch_reversed(std::size_t batch_size) {
    if (kind_ != SamplerKind::Reversed) throw StateError("next_batch_reversed on a non-reversed sampler");
    return next_batch_by_class(batch_size);
  }

  // Class via inverse CDF over the class probabilities.
  std::size_t draw_class() {
    const double u = rng_.uniform();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  // Class first, then a sample of that class uniformly with replacement.
  std::vector<std::size_t> next_batch_by_class(std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    std::vector<std::size_t> out(batch_size);
    for (auto& idx : out) {
      const auto& members = class_index_lists_[draw_class()];
      idx = members[rng_.below(members.size())];
    }
    return out;
  }

  void set_class_probs(std::vector<double> probs) {
    probs_ = std::move(probs);
    cdf_.resize(probs_.size());
    std::partial_sum(probs_.begin(), probs_.end(), cdf_.begin());
    cdf_.back() = 1.0;
  }

  // Fisher-Yates with a per-epoch stream seeded from seed xor epoch.
  void reshuffle() {
    std::iota(permutation_.begin(), permutation_.end(), std::size_t{0});
    Rng epoch_rng(mix_seed(seed_ ^ static_cast<std::uint64_t>(epoch_)));
    for (std::size_t i = n_; i > 1; --i) std::swap(permutation_[i - 1], permutation_[epoch_rng.below(i)]);
  }

  SamplerKind kind_;
  std::uint64_t seed_;
  std::size_t n_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> class_index_lists_;
  std::vector<std::size_t> permutation_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::vector<double> probs_;
  std::vector<double> cdf_;
};

}  // namespace bbn
