#pragma once

// Diagnostics: classifier weight-norm profiles, intra-class compactness of
// representations, frozen-branch feature quality, and two-model ensembles.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bbn/baselines.hpp"
#include "bbn/bbn.hpp"
#include "bbn/data.hpp"
#include "bbn/nn.hpp"

namespace bbn {

struct NormReport {
  std::vector<double> per_class_norm;
  double sigma = 0.0;  // population standard deviation of per_class_norm
  std::string source;  // CE, RW, RS, BBN-CB, BBN-RB, BBN-ALL
};

inline double population_stddev(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / n);
}

// Column i of W (D x C) is the weight vector of class i.
inline NormReport classifier_norms(const Tensor& W, std::string source = {}) {
  NormReport rep;
  rep.source = std::move(source);
  rep.per_class_norm.assign(W.cols(), 0.0);
  for (std::size_t r = 0; r < W.rows(); ++r)
    for (std::size_t c = 0; c < W.cols(); ++c) rep.per_class_norm[c] += W.at(r, c) * W.at(r, c);
  for (double& v : rep.per_class_norm) v = std::sqrt(v);
  rep.sigma = population_stddev(rep.per_class_norm);
  return rep;
}

struct CompactnessReport {
  std::vector<double> per_class_mean_distance;
  Tensor per_class_centroid;  // C x D
};

// Mean Euclidean distance of each class's rows to the class centroid. With
// `normalize`, rows are scaled to unit norm first (zero rows stay zero).
inline CompactnessReport compactness(const Tensor& features, std::span<const std::size_t> labels,
                                     std::size_t num_classes, bool normalize = true) {
  if (features.rows() != labels.size()) throw DimensionError("feature rows do not match labels");
  const std::size_t D = features.cols();
  Tensor x = features;
  if (normalize) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto row = x.row(r);
      double n2 = 0.0;
      for (double v : row) n2 += v * v;
      if (n2 > 0.0) {
        const double inv = 1.0 / std::sqrt(n2);
        for (double& v : row) v *= inv;
      }
    }
  }
  const auto counts = count_labels(labels, num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw DataError("class " + std::to_string(c) + " has no feature rows");
  }
  CompactnessReport rep;
  rep.per_class_centroid = Tensor::matrix(num_classes, D);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto cen = rep.per_class_centroid.row(labels[r]);
    auto row = x.row(r);
    for (std::size_t j = 0; j < D; ++j) cen[j] += row[j];
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    for (double& v : rep.per_class_centroid.row(c)) v /= static_cast<double>(counts[c]);
  rep.per_class_mean_distance.assign(num_classes, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto cen = rep.per_class_centroid.row(labels[r]);
    auto row = x.row(r);
    double d2 = 0.0;
    for (std::size_t j = 0; j < D; ++j) d2 += (row[j] - cen[j]) * (row[j] - cen[j]);
    rep.per_class_mean_distance[labels[r]] += std::sqrt(d2);
  }
  for (std::size_t c = 0; c < num_classes; ++c) rep.per_class_mean_distance[c] /= static_cast<double>(counts[c]);
  return rep;
}

struct FeatureQuality {
  double conventional_error = 0.0;  // BBN-CB
  double rebalancing_error = 0.0;   // BBN-RB
};

// Freezes trunk + one branch at a time, retrains a fresh classifier on that
// branch's features and reports balanced-test error for each branch.
inline FeatureQuality feature_quality_eval(const BBNModel& model, const Dataset& train_ds, const Dataset& test_ds,
                                           Manner classifier_manner, const TrainOptions& retrain) {
  auto run = [&](bool conventional) {
    const Network fx = branch_feature_extractor(model, conventional);
    return retrain_classifier_on_features(with_features(train_ds, predict(fx, train_ds.features)),
                                          with_features(test_ds, predict(fx, test_ds.features)), classifier_manner,
                                          retrain)
        .test_error;
  };
  return {run(true), run(false)};
}

// Averages the two models' softmax outputs; ties go to the lowest class.
inline std::vector<std::size_t> ensemble_predict(const Network& a, const Network& b, const Tensor& x) {
  Tensor pa = softmax(predict(a, x));
  const Tensor pb = softmax(predict(b, x));
  if (pa.shape() != pb.shape()) throw ConfigError("ensemble members disagree on the class count");
  auto av = pa.values();
  auto bv = pb.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] = 0.5 * (av[i] + bv[i]);
  return argmax_rows(pa);
}

inline double ensemble_eval(const Network& a, const Network& b, const Dataset& test_ds) {
  if (a.output_width() != b.output_width()) throw ConfigError("ensemble members disagree on the class count");
  return error_rate(ensemble_predict(a, b, test_ds.features), test_ds.labels);
}

// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return xs[i] < xs[j]; });
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw DimensionError("spearman needs two equal-length series");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  return pearson(ra, rb);
}

}  // namespace bbn
