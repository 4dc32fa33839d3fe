#include "otkd/predictions.hpp"

#include <cmath>
#include <string>

#include "otkd/error.hpp"

namespace otkd {

namespace {

bool finite(double v) { return std::isfinite(v); }

}  // namespace

void validate(const KeypointPredictionSet& set) {
  if (set.image_size[0] <= 0 || set.image_size[1] <= 0)
    throw_invalid("image_size components must be positive");
  if (set.num_keypoints < 1) throw_invalid("num_keypoints must be >= 1");
  for (std::size_t i = 0; i < set.cells.size(); ++i) {
    const auto& c = set.cells[i];
    const std::string where = "cells[" + std::to_string(i) + "]";
    if (!finite(c.score) || c.score < 0.0 || c.score > 1.0)
      throw_invalid(where + ".score must lie in [0,1]");
    if (static_cast<int>(c.votes.size()) != set.num_keypoints)
      throw_invalid(where + " carries " + std::to_string(c.votes.size()) + " votes, expected " +
                    std::to_string(set.num_keypoints));
    for (const auto& v : c.votes)
      if (!finite(v[0]) || !finite(v[1])) throw_invalid(where + " has a non-finite vote");
  }
}

void validate(const DenseCodePredictionSet& set) {
  if (set.grid_size[0] <= 0 || set.grid_size[1] <= 0)
    throw_invalid("grid_size components must be positive");
  if (set.code_dim < 1) throw_invalid("code_dim must be >= 1");
  const std::size_t expected =
      static_cast<std::size_t>(set.grid_size[0]) * static_cast<std::size_t>(set.grid_size[1]);
  if (set.cells.size() != expected)
    throw_invalid("dense grid must be fully populated: expected " + std::to_string(expected) +
                  " cells, got " + std::to_string(set.cells.size()));
  for (std::size_t i = 0; i < set.cells.size(); ++i) {
    const auto& c = set.cells[i];
    const std::string where = "cells[" + std::to_string(i) + "]";
    if (!finite(c.score) || c.score < 0.0 || c.score > 1.0)
      throw_invalid(where + ".score must lie in [0,1]");
    if (static_cast<int>(c.code.size()) != set.code_dim)
      throw_invalid(where + ".code has dimension " + std::to_string(c.code.size()) +
                    ", expected " + std::to_string(set.code_dim));
    for (double b : c.code)
      if (!finite(b) || b < 0.0 || b > 1.0)
        throw_invalid(where + ".code components must lie in [0,1]");
  }
}

KeypointPredictionSet normalize_keypoints(const KeypointPredictionSet& set) {
  if (set.image_size[0] <= 0 || set.image_size[1] <= 0)
    throw_invalid("image_size components must be positive");
  KeypointPredictionSet out = set;
  const double w = static_cast<double>(set.image_size[0]);
  const double h = static_cast<double>(set.image_size[1]);
  for (auto& cell : out.cells)
    for (auto& vote : cell.votes) {
      vote[0] /= w;
      vote[1] /= h;
    }
  return out;
}

WeightedPointSet extract_corner_cloud(const KeypointPredictionSet& set, int k) {
  if (k < 0 || k >= set.num_keypoints)
    throw_invalid("corner index " + std::to_string(k) + " out of range [0," +
                  std::to_string(set.num_keypoints) + ")");
  WeightedPointSet out;
  const Eigen::Index n = static_cast<Eigen::Index>(set.cells.size());
  out.points.resize(n, 2);
  out.weights.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = set.cells[static_cast<std::size_t>(i)];
    out.points(i, 0) = c.votes[static_cast<std::size_t>(k)][0];
    out.points(i, 1) = c.votes[static_cast<std::size_t>(k)][1];
    out.weights[i] = c.score;
  }
  return out;
}

WeightedPointSet pool_dense(const DenseCodePredictionSet& set, int block, double coord_scale) {
  validate(set);
  if (block < 1) throw_invalid("pooling block must be >= 1");
  const int wg = set.grid_size[0];
  const int hg = set.grid_size[1];
  if (block > wg || block > hg)
    throw_invalid("pooling block " + std::to_string(block) + " exceeds grid " +
                  std::to_string(wg) + "x" + std::to_string(hg));

  const int tiles_x = wg / block;  // trailing partial tiles truncated
  const int tiles_y = hg / block;
  const int d = set.code_dim;
  const double inv_count = 1.0 / (static_cast<double>(block) * static_cast<double>(block));

  WeightedPointSet out;
  out.points.setZero(static_cast<Eigen::Index>(tiles_x) * tiles_y, d + 2);
  out.weights.setZero(out.points.rows());

  for (int ty = 0; ty < tiles_y; ++ty) {
    for (int tx = 0; tx < tiles_x; ++tx) {
      const Eigen::Index row = static_cast<Eigen::Index>(ty) * tiles_x + tx;
      double score_sum = 0.0;
      for (int dy = 0; dy < block; ++dy) {
        for (int dx = 0; dx < block; ++dx) {
          const int x = tx * block + dx;
          const int y = ty * block + dy;
          const auto& cell = set.cells[static_cast<std::size_t>(y) * wg + x];
          score_sum += cell.score;
          for (int c = 0; c < d; ++c) out.points(row, c) += cell.code[static_cast<std::size_t>(c)];
        }
      }
      out.points.row(row).head(d) *= inv_count;
      // tile center over cell centers, normalized by the full grid extent
      out.points(row, d) = coord_scale * (tx * block + block * 0.5) / wg;
      out.points(row, d + 1) = coord_scale * (ty * block + block * 0.5) / hg;
      out.weights[row] = score_sum * inv_count;
    }
  }
  return out;
}

}  // namespace otkd
