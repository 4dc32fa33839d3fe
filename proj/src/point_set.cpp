#include "otkd/point_set.hpp"

#include <cmath>

#include "otkd/error.hpp"

namespace otkd {

void validate(const WeightedPointSet& set) {
  if (set.points.rows() != set.weights.size())
    throw_invalid("point/weight count mismatch");
  if (set.points.rows() < 1) throw_invalid("point set must hold at least one point");
  if (!set.points.allFinite()) throw_invalid("non-finite point component");
  if (!set.weights.allFinite()) throw_invalid("non-finite weight");
  if ((set.weights.array() < 0.0).any()) throw_invalid("negative weight");
}

WeightedPointSet normalize_weights(const WeightedPointSet& set, WeightMode mode, double floor) {
  std::vector<Eigen::Index> kept;
  return normalize_weights_indexed(set, mode, floor, kept);
}

WeightedPointSet normalize_weights_indexed(const WeightedPointSet& set, WeightMode mode,
                                           double floor, std::vector<Eigen::Index>& kept) {
  validate(set);
  kept.clear();
  if (mode == WeightMode::raw) {
    kept.resize(static_cast<std::size_t>(set.size()));
    for (Eigen::Index i = 0; i < set.size(); ++i) kept[static_cast<std::size_t>(i)] = i;
    return set;
  }

  const double total = set.weights.sum();
  if (!(total > 0.0)) throw_empty("all weights are zero; nothing to normalize");
  for (Eigen::Index i = 0; i < set.size(); ++i)
    if (set.weights[i] / total >= floor) kept.push_back(i);
  if (kept.empty()) throw_empty("all weights fall below the floor after normalization");

  WeightedPointSet out;
  out.points.resize(static_cast<Eigen::Index>(kept.size()), set.dim());
  out.weights.resize(static_cast<Eigen::Index>(kept.size()));
  double kept_sum = 0.0;
  for (std::size_t r = 0; r < kept.size(); ++r) kept_sum += set.weights[kept[r]];
  for (std::size_t r = 0; r < kept.size(); ++r) {
    out.points.row(static_cast<Eigen::Index>(r)) = set.points.row(kept[r]);
    out.weights[static_cast<Eigen::Index>(r)] = set.weights[kept[r]] / kept_sum;
  }
  return out;
}

}  // namespace otkd
