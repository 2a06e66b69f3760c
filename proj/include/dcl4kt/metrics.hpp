#pragma once

#include "dcl4kt/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace dcl4kt {

template <typename Scalar = double>
struct PredictionRecord {
  Scalar prob;
  int label;
};

/// Area under the ROC curve via ranks; tied scores share their average rank
/// (Mann-Whitney convention). Throws UndefinedMetricError if only one class
/// is present.
template <typename Scalar>
Scalar auc(std::span<const PredictionRecord<Scalar>> records) {
  std::size_t pos = 0;
  for (const auto& r : records) pos += r.label ? 1 : 0;
  const std::size_t neg = records.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("AUC needs both positive and negative labels");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return records[a].prob < records[b].prob; });
  // Sum of positive ranks (1-based, ties averaged).
  long double rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && records[order[j]].prob == records[order[i]].prob) ++j;
    long double avg = (static_cast<long double>(i + 1) + static_cast<long double>(j)) / 2;
    for (std::size_t k = i; k < j; ++k)
      if (records[order[k]].label) rank_sum += avg;
    i = j;
  }
  long double u = rank_sum - static_cast<long double>(pos) * static_cast<long double>(pos + 1) / 2;
  return static_cast<Scalar>(u / (static_cast<long double>(pos) * static_cast<long double>(neg)));
}

template <typename Scalar>
Scalar auc(const std::vector<PredictionRecord<Scalar>>& records) {
  return auc(std::span<const PredictionRecord<Scalar>>(records));
}

/// sqrt(mean((prob - label)^2)); 0 for an empty set.
template <typename Scalar>
Scalar rmse(std::span<const PredictionRecord<Scalar>> records) {
  if (records.empty()) return Scalar(0);
  long double s = 0;
  for (const auto& r : records) {
    long double d = static_cast<long double>(r.prob) - r.label;
    s += d * d;
  }
  return static_cast<Scalar>(std::sqrt(s / static_cast<long double>(records.size())));
}

template <typename Scalar>
Scalar rmse(const std::vector<PredictionRecord<Scalar>>& records) {
  return rmse(std::span<const PredictionRecord<Scalar>>(records));
}

/// Pools the valid positions of a [batch, len] prediction matrix.
template <typename Scalar>
void append_records(std::vector<PredictionRecord<Scalar>>& out, const Mat<Scalar>& probs, const MatrixXi& labels,
                    const MatrixXi& mask) {
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index t = 0; t < probs.cols(); ++t)
      if (mask(i, t)) out.push_back({probs(i, t), labels(i, t)});
}

struct MetricSummary {
  double auc = 0;
  double rmse = 0;
  std::size_t count = 0;
};

}  // namespace dcl4kt
