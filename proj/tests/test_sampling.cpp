#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bbn/sampling.hpp"

using namespace bbn;

namespace {

std::vector<std::size_t> labels_for(const std::vector<std::size_t>& counts) {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], c);
  return labels;
}

// Empirical class frequencies over n single draws through next_batch.
std::vector<double> class_frequencies(Sampler& s, const std::vector<std::size_t>& labels, std::size_t C,
                                      std::size_t n) {
  std::vector<double> freq(C, 0.0);
  const std::size_t batch = 1000;
  for (std::size_t done = 0; done < n; done += batch)
    for (std::size_t idx : s.next_batch(batch)) freq[labels[idx]] += 1.0;
  for (double& f : freq) f /= static_cast<double>(n);
  return freq;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

}  // namespace

TEST(ReversedProbs, EqualCountsAreUniform) {
  const std::vector<std::size_t> counts{100, 100};
  const auto cw = reversed_probs(counts);
  EXPECT_EQ(cw.P, (std::vector<double>{0.5, 0.5}));
}

TEST(ReversedProbs, HandEvaluated) {
  const std::vector<std::size_t> counts{100, 50, 10};
  const auto cw = reversed_probs(counts);
  EXPECT_EQ(cw.w, (std::vector<double>{1.0, 2.0, 10.0}));
  EXPECT_NEAR(cw.P[0], 1.0 / 13.0, 1e-15);
  EXPECT_NEAR(cw.P[1], 2.0 / 13.0, 1e-15);
  EXPECT_NEAR(cw.P[2], 10.0 / 13.0, 1e-15);
}

TEST(ReversedProbs, InvariantsOnRandomCounts) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> counts(1 + rng.below(20));
    for (auto& c : counts) c = 1 + rng.below(1000);
    const auto cw = reversed_probs(counts);
    EXPECT_NEAR(std::accumulate(cw.P.begin(), cw.P.end(), 0.0), 1.0, 1e-12);
    for (double p : cw.P) EXPECT_GT(p, 0.0);
    const auto argmax_p = std::max_element(cw.P.begin(), cw.P.end()) - cw.P.begin();
    EXPECT_EQ(counts[argmax_p], *std::min_element(counts.begin(), counts.end()));
    // Scaling every count by k leaves P unchanged.
    const std::size_t k = 1 + rng.below(7);
    std::vector<std::size_t> scaled = counts;
    for (auto& c : scaled) c *= k;
    const auto cs = reversed_probs(scaled);
    for (std::size_t i = 0; i < counts.size(); ++i) EXPECT_NEAR(cs.P[i], cw.P[i], 1e-15);
  }
}

TEST(ReversedProbs, ZeroCountIsADataError) {
  const std::vector<std::size_t> counts{3, 0, 1};
  EXPECT_THROW(reversed_probs(counts), DataError);
}

TEST(UniformSampler, SingleBatchEpochContainsEachIndexOnce) {
  const auto labels = labels_for({5, 3});
  Sampler s(SamplerKind::Uniform, labels, 2, 4);
  auto batch = s.next_batch_uniform(8);
  std::sort(batch.begin(), batch.end());
  std::vector<std::size_t> expected(8);
  std::iota(expected.begin(), expected.end(), std::size_t{0});
  EXPECT_EQ(batch, expected);
}

TEST(UniformSampler, EveryEpochIsAPermutationWithShortFinalBatch) {
  const auto labels = labels_for({20, 9, 4});
  const std::size_t N = labels.size();
  Sampler s(SamplerKind::Uniform, labels, 3, 12);
  std::vector<std::size_t> previous;
  for (int epoch = 0; epoch < 6; ++epoch) {
    std::vector<std::size_t> seen;
    std::vector<std::size_t> sizes;
    while (seen.size() < N) {
      const auto b = s.next_batch_uniform(10);
      sizes.push_back(b.size());
      seen.insert(seen.end(), b.begin(), b.end());
    }
    EXPECT_EQ(s.epoch(), static_cast<std::size_t>(epoch));
    EXPECT_EQ(sizes, (std::vector<std::size_t>{10, 10, 10, 3}));
    EXPECT_NE(seen, previous);
    previous = seen;
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < N; ++i) EXPECT_EQ(seen[i], i);
  }
}

TEST(Samplers, SameSeedSameStream) {
  const auto labels = labels_for({30, 10, 2});
  for (SamplerKind kind : {SamplerKind::Uniform, SamplerKind::Balanced, SamplerKind::Reversed}) {
    Sampler a(kind, labels, 3, 77), b(kind, labels, 3, 77), c(kind, labels, 3, 78);
    bool differs = false;
    for (int i = 0; i < 20; ++i) {
      const auto ba = a.next_batch(7);
      EXPECT_EQ(ba, b.next_batch(7));
      differs = differs || ba != c.next_batch(7);
    }
    EXPECT_TRUE(differs) << to_string(kind);
  }
}

TEST(Samplers, ClassIndexListsPartitionTheDataset) {
  const std::vector<std::size_t> labels{2, 0, 1, 2, 2, 0};
  Sampler s(SamplerKind::Reversed, labels, 3, 1);
  const auto& lists = s.class_index_lists();
  EXPECT_EQ(lists[0], (std::vector<std::size_t>{1, 5}));
  EXPECT_EQ(lists[1], (std::vector<std::size_t>{2}));
  EXPECT_EQ(lists[2], (std::vector<std::size_t>{0, 3, 4}));
}

TEST(Samplers, KindMismatchIsAStateError) {
  const auto labels = labels_for({3, 2});
  Sampler u(SamplerKind::Uniform, labels, 2, 1);
  Sampler b(SamplerKind::Balanced, labels, 2, 1);
  EXPECT_THROW(u.next_batch_reversed(2), StateError);
  EXPECT_THROW(u.next_batch_balanced(2), StateError);
  EXPECT_THROW(b.next_batch_uniform(2), StateError);
  EXPECT_THROW(b.next_batch_reversed(2), StateError);
}

TEST(Samplers, EmptyClassIsRejectedByClassDrivenSamplers) {
  const std::vector<std::size_t> labels{0, 0, 2};
  EXPECT_THROW(Sampler(SamplerKind::Balanced, labels, 3, 1), DataError);
  EXPECT_THROW(Sampler(SamplerKind::Reversed, labels, 3, 1), DataError);
  EXPECT_NO_THROW(Sampler(SamplerKind::Uniform, labels, 3, 1));
}

TEST(BalancedSampler, SingleClassDegeneratesToUniformWithReplacement) {
  const std::vector<std::size_t> labels(5, 0);
  Sampler s(SamplerKind::Balanced, labels, 1, 3);
  std::vector<double> freq(5, 0.0);
  for (int i = 0; i < 100; ++i)
    for (std::size_t idx : s.next_batch_balanced(100)) freq[idx] += 1e-4;
  for (double f : freq) EXPECT_NEAR(f, 0.2, 0.01);
}

TEST(BalancedSampler, SingletonTailRepeatsWithinABatch) {
  const auto labels = labels_for({50, 1});
  Sampler s(SamplerKind::Balanced, labels, 2, 8);
  const auto batch = s.next_batch_balanced(64);
  EXPECT_GT(std::count(batch.begin(), batch.end(), std::size_t{50}), 1);
}

TEST(BalancedSampler, MonteCarloFrequenciesAreUniform) {
  const auto labels = labels_for({500, 300, 200, 120, 80, 50, 30, 20, 10, 5});
  Sampler s(SamplerKind::Balanced, labels, 10, 2024);
  const auto freq = class_frequencies(s, labels, 10, 1'000'000);
  for (double f : freq) EXPECT_NEAR(f, 0.1, 0.005);
  EXPECT_LE(total_variation(freq, std::vector<double>(10, 0.1)), 0.01);
}

TEST(ReversedSampler, MonteCarloMatchesReversedProbabilities) {
  const auto labels = labels_for({100, 50, 10});
  Sampler s(SamplerKind::Reversed, labels, 3, 2025);
  const auto freq = class_frequencies(s, labels, 3, 1'000'000);
  const std::vector<double> target{1.0 / 13.0, 2.0 / 13.0, 10.0 / 13.0};
  EXPECT_NEAR(freq[2], 10.0 / 13.0, 0.005);
  EXPECT_LE(total_variation(freq, target), 0.01);
  EXPECT_LT(freq[0], freq[1]);
  EXPECT_LT(freq[1], freq[2]);
}

TEST(ReversedSampler, EqualCountsBehaveLikeBalanced) {
  const auto labels = labels_for({40, 40, 40, 40});
  Sampler s(SamplerKind::Reversed, labels, 4, 5);
  EXPECT_EQ(s.class_probs(), std::vector<double>(4, 0.25));
  const auto freq = class_frequencies(s, labels, 4, 200'000);
  for (double f : freq) EXPECT_NEAR(f, 0.25, 0.005);
}
