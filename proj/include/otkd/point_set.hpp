#pragma once

#include <Eigen/Core>
#include <vector>

namespace otkd {

/// A cloud of N points in D dimensions with a nonnegative mass per point.
/// This is the common currency of every transport solve: corner vote clouds,
/// pooled code vectors and their segmentation-score masses all end up here.
struct WeightedPointSet {
  Eigen::MatrixXd points;   // N x D, one point per row
  Eigen::VectorXd weights;  // N, >= 0

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
};

/// Validates finiteness, nonnegative weights and shape agreement.
/// Throws invalid_input on violation.
void validate(const WeightedPointSet& set);

enum class WeightMode {
  unit_mass,  // drop sub-floor cells, rescale the rest to total mass 1
  raw,        // pass weights through unchanged
};

/// In unit-mass mode: normalize to total mass 1, drop points whose normalized
/// weight falls below `floor`, and rescale the survivors back to mass 1.
/// Raw mode returns the input unchanged.
/// Throws empty_distribution when no mass survives.
WeightedPointSet normalize_weights(const WeightedPointSet& set, WeightMode mode,
                                   double floor = 1e-6);

/// Same as normalize_weights but also reports which input rows survived,
/// for chaining gradients back to un-normalized weights.
WeightedPointSet normalize_weights_indexed(const WeightedPointSet& set, WeightMode mode,
                                           double floor, std::vector<Eigen::Index>& kept);

}  // namespace otkd
