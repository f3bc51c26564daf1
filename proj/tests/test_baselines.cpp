#include <gtest/gtest.h>

#include <cmath>

#include "bbn/baselines.hpp"
#include "bbn/data.hpp"

using namespace bbn;

namespace {

// Two classes split by the sign of x0 with |x0| >= 0.5.
Dataset separable_toy(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.features = Tensor::matrix(2 * per_class, 2);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const std::size_t y = i < per_class ? 0 : 1;
    const double sign = y == 0 ? -1.0 : 1.0;
    ds.features.at(i, 0) = sign * rng.uniform(0.5, 2.0);
    ds.features.at(i, 1) = rng.uniform(-2.0, 2.0);
    ds.labels.push_back(y);
  }
  ds.class_counts = {per_class, per_class};
  return ds;
}

TrainOptions quick_options(std::size_t epochs, std::uint64_t seed) {
  TrainOptions opt;
  opt.epochs = epochs;
  opt.batch_size = 32;
  opt.seed = seed;
  opt.optimizer = {0.05, 0.9, 2e-4, 1, {}, 0.1};
  if (epochs >= 10) opt.optimizer.milestones = {epochs * 6 / 10, epochs * 8 / 10};
  return opt;
}

ModelDims small_dims() { return {{16, 16}, {8}}; }

struct LongTail {
  SyntheticSpec spec;
  Dataset train, test;
};

LongTail long_tail(std::uint64_t seed) {
  LongTail lt;
  lt.spec = SyntheticSpec::random(5, 12, 3.0, 1.0, seed, 3);
  lt.train = synth_dataset(lt.spec, make_counts({5, 200, 20.0}));
  lt.test = make_balanced_test(lt.spec, 200);
  return lt;
}

}  // namespace

TEST(ReweightFactors, EqualCountsGiveUnitWeights) {
  const std::vector<std::size_t> counts{7, 7, 7};
  for (double w : reweight_factors(counts)) EXPECT_DOUBLE_EQ(w, 1.0);
}

TEST(ReweightFactors, HandSolvedNormalization) {
  // Raw weights 1/90 and 1/10 scaled by k with 90k/90 + 10k/10 = 100: k = 50.
  const std::vector<std::size_t> counts{90, 10};
  const auto w = reweight_factors(counts);
  EXPECT_NEAR(w[0], 5.0 / 9.0, 1e-15);
  EXPECT_NEAR(w[1], 5.0, 1e-15);
}

TEST(ReweightFactors, MeanSampleWeightIsOneAndInverseMonotone) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> counts(2 + rng.below(10));
    for (auto& c : counts) c = 1 + rng.below(500);
    const auto w = reweight_factors(counts);
    double total = 0.0, n = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      total += w[i] * static_cast<double>(counts[i]);
      n += static_cast<double>(counts[i]);
    }
    EXPECT_NEAR(total / n, 1.0, 1e-12);
    const auto hi = std::max_element(w.begin(), w.end()) - w.begin();
    EXPECT_EQ(counts[hi], *std::min_element(counts.begin(), counts.end()));
  }
}

TEST(TrainManner, ZeroEpochsLeavesNetUnchanged) {
  const auto lt = long_tail(1);
  Network net = make_classifier_net(lt.train.dim(), 5, small_dims(), 4);
  const Network before = net;
  TrainOptions opt = quick_options(0, 4);
  EXPECT_TRUE(train_manner(net, lt.train, Manner::RS, opt).empty());
  EXPECT_TRUE(net == before);
}

TEST(TrainManner, SeparableToyReachesZeroTrainingError) {
  const Dataset ds = separable_toy(100, 5);
  // Margin witness: w = (1, 0) classifies every sample with margin >= 0.5.
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double margin = (ds.labels[i] == 1 ? 1.0 : -1.0) * ds.features.at(i, 0);
    ASSERT_GE(margin, 0.5);
  }
  Network net = make_classifier_net(2, 2, small_dims(), 6);
  train_manner(net, ds, Manner::CE, quick_options(50, 6));
  EXPECT_EQ(error_rate(net, ds), 0.0);
}

TEST(TrainManner, ReweightingOnBalancedDataMatchesCE) {
  const Dataset ds = separable_toy(40, 7);
  Network ce = make_classifier_net(2, 2, small_dims(), 8);
  Network rw = ce;
  const auto opt = quick_options(5, 8);
  const auto hc = train_manner(ce, ds, Manner::CE, opt);
  const auto hr = train_manner(rw, ds, Manner::RW, opt);
  EXPECT_TRUE(ce == rw);
  for (std::size_t e = 0; e < hc.size(); ++e) EXPECT_EQ(hc[e].train_loss, hr[e].train_loss);
}

TEST(TrainManner, NanLossAbortsWithNumericError) {
  const Dataset ds = separable_toy(10, 9);
  Network net = make_classifier_net(2, 2, small_dims(), 9);
  for (Parameter* p : net.parameters()) p->value.fill(std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(train_manner(net, ds, Manner::CE, quick_options(1, 9)), NumericError);
}

TEST(TrainManner, SameSeedSameTrajectory) {
  const auto lt = long_tail(2);
  auto run = [&] {
    Network net = make_classifier_net(lt.train.dim(), 5, small_dims(), 10);
    train_manner(net, lt.train, Manner::RS, quick_options(3, 10));
    return net;
  };
  EXPECT_TRUE(run() == run());
}

TEST(TwoStage, ZeroStageTwoEpochsIsPlainCE) {
  const auto lt = long_tail(3);
  Network net = make_classifier_net(lt.train.dim(), 5, small_dims(), 11);
  train_manner(net, lt.train, Manner::CE, quick_options(4, 11));
  const Network ce = net;
  two_stage_finetune(net, lt.train, Rebalance::DRW, 0, 1e-3, quick_options(4, 11));
  EXPECT_TRUE(net == ce);
}

TEST(TwoStage, DeferredReweightingOnBalancedDataIsContinuedCE) {
  const Dataset ds = separable_toy(40, 12);
  Network a = make_classifier_net(2, 2, small_dims(), 12);
  train_manner(a, ds, Manner::CE, quick_options(3, 12));
  Network b = a;
  auto opt = quick_options(3, 12);
  two_stage_finetune(a, ds, Rebalance::DRW, 2, 1e-3, opt);
  opt.epochs = 2;
  opt.constant_lr = 1e-3;
  train_network(b, ds, SamplerKind::Uniform, {}, opt, streams::kStage2);
  EXPECT_TRUE(a == b);
}

TEST(FreezeRetrain, TrunkUntouchedAndDeterministic) {
  const auto lt = long_tail(4);
  Network net = make_classifier_net(lt.train.dim(), 5, small_dims(), 13);
  train_manner(net, lt.train, Manner::CE, quick_options(3, 13));
  const Network before = net;
  const auto r1 = freeze_and_retrain_classifier(net, Manner::RW, lt.train, lt.test, quick_options(3, 14));
  const auto r2 = freeze_and_retrain_classifier(net, Manner::RW, lt.train, lt.test, quick_options(3, 14));
  EXPECT_TRUE(net == before);
  EXPECT_TRUE(r1.classifier == r2.classifier);
  EXPECT_EQ(r1.test_error, r2.test_error);
  EXPECT_EQ(r1.classifier.depth(), 1u);
  EXPECT_FALSE(final_classifier(r1.classifier).bias.has_value());
}

TEST(FreezeRetrain, ZeroEpochsGivesFreshRandomClassifier) {
  const auto lt = long_tail(5);
  Network net = make_classifier_net(lt.train.dim(), 5, small_dims(), 15);
  const auto opt = quick_options(0, 16);
  const auto r = freeze_and_retrain_classifier(net, Manner::CE, lt.train, lt.test, opt);
  Rng rng(derive_seed(16, streams::kClassifier));
  Network fresh;
  fresh.add_affine(8, 5, rng, false);
  EXPECT_TRUE(r.classifier == fresh);
  const Network trunk = feature_extractor(net);
  EXPECT_EQ(r.test_error, error_rate(fresh, with_features(lt.test, predict(trunk, lt.test.features))));
}

TEST(FreezeRetrain, RandomTrunkIsWorseThanEndToEnd) {
  const auto lt = long_tail(6);
  Network trained = make_classifier_net(lt.train.dim(), 5, small_dims(), 17);
  const Network untrained = trained;
  train_manner(trained, lt.train, Manner::CE, quick_options(30, 17));
  const auto frozen = freeze_and_retrain_classifier(untrained, Manner::CE, lt.train, lt.test, quick_options(30, 17));
  EXPECT_GT(frozen.test_error, error_rate(trained, lt.test));
}

TEST(FreezeRetrain, NetworkWithoutClassifierIsAStateError) {
  Network relu_only;
  relu_only.add_relu();
  EXPECT_THROW(feature_extractor(relu_only), StateError);
}

TEST(Transfer, SameDatasetEqualsFreezeRetrain) {
  const auto lt = long_tail(7);
  Network net = make_classifier_net(lt.train.dim(), 5, small_dims(), 18);
  train_manner(net, lt.train, Manner::CE, quick_options(3, 18));
  const auto opt = quick_options(3, 19);
  EXPECT_EQ(cross_dataset_transfer(net, lt.train, lt.test, Manner::RS, opt),
            freeze_and_retrain_classifier(net, Manner::RS, lt.train, lt.test, opt).test_error);
}

TEST(Transfer, TrainedTrunkBeatsRandomTrunkOnDisjointMeans) {
  const auto a = long_tail(8);
  // B: reflected means, disjoint from A's, inside the same subspace.
  SyntheticSpec spec_b = a.spec;
  for (double& v : spec_b.class_means.values()) v = -v;
  spec_b.seed = 1234;
  const Dataset train_b = synth_dataset(spec_b, make_counts({5, 200, 20.0}));
  const Dataset test_b = make_balanced_test(spec_b, 200);
  Network net = make_classifier_net(a.train.dim(), 5, small_dims(), 20);
  const Network random_trunk = net;
  train_manner(net, a.train, Manner::CE, quick_options(30, 20));
  const auto opt = quick_options(30, 21);
  EXPECT_LT(cross_dataset_transfer(net, train_b, test_b, Manner::CE, opt),
            cross_dataset_transfer(random_trunk, train_b, test_b, Manner::CE, opt));
}

TEST(Transfer, WidthMismatchIsAConfigError) {
  const auto lt = long_tail(9);
  Network net = make_classifier_net(lt.train.dim() + 1, 5, small_dims(), 22);
  EXPECT_THROW(cross_dataset_transfer(net, lt.train, lt.test, Manner::CE, quick_options(1, 22)), ConfigError);
}

TEST(DecoupleGrid, DiagonalCellIsTwoStageCE) {
  const auto lt = long_tail(10);
  DecoupleGridConfig cfg{small_dims(), quick_options(4, 0), quick_options(3, 0)};
  const std::uint64_t seeds[] = {23};
  const auto grid = decouple_grid(lt.train, lt.test, cfg, seeds);
  auto s1 = cfg.stage1;
  s1.seed = 23;
  Network net = make_classifier_net(lt.train.dim(), 5, small_dims(), 23);
  train_manner(net, lt.train, Manner::CE, s1);
  auto s2 = cfg.retrain;
  s2.seed = 23;
  EXPECT_EQ(grid.error[0][0], freeze_and_retrain_classifier(net, Manner::CE, lt.train, lt.test, s2).test_error);
  ASSERT_EQ(grid.per_seed.size(), 1u);
  EXPECT_EQ(grid.per_seed[0], grid.error);
  const std::vector<std::uint64_t> none;
  EXPECT_THROW(decouple_grid(lt.train, lt.test, cfg, none), ConfigError);
}
