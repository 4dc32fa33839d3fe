#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "otkd/point_set.hpp"

namespace otkd {

/// One active cell of a keypoint-voting network head: grid coordinates,
/// a segmentation score in [0,1] and one 2-D vote per keypoint.
struct KeypointCell {
  std::array<int, 2> cell_xy{0, 0};
  double score = 0.0;
  std::vector<std::array<double, 2>> votes;  // num_keypoints entries
};

struct KeypointPredictionSet {
  std::array<int, 2> image_size{0, 0};  // width, height in pixels
  int num_keypoints = 0;
  std::vector<KeypointCell> cells;
};

/// One cell of a dense binary-code head: a score plus code_dim bit
/// probabilities in [0,1].
struct DenseCell {
  double score = 0.0;
  std::vector<double> code;
};

struct DenseCodePredictionSet {
  std::array<int, 2> grid_size{0, 0};  // W_g, H_g
  int code_dim = 0;
  std::vector<DenseCell> cells;  // row-major: index = y * W_g + x
};

/// Structural validation (shape agreement, score/code ranges, finiteness).
void validate(const KeypointPredictionSet& set);
void validate(const DenseCodePredictionSet& set);

/// Divides every vote by the image width/height, mapping in-frame votes to
/// [0,1]^2. Out-of-frame votes land outside the unit square and stay there;
/// the transport relaxation absorbs them. Throws on nonpositive image size.
KeypointPredictionSet normalize_keypoints(const KeypointPredictionSet& set);

/// Projects out corner k: the per-cell votes for that corner become the
/// points, the raw per-cell scores become the weights.
WeightedPointSet extract_corner_cloud(const KeypointPredictionSet& set, int k);

/// Average-pools the grid over block x block tiles. Each full tile yields one
/// point of dimension code_dim + 2: the mean code vector concatenated with
/// the tile-center coordinates normalized by the grid size (then multiplied
/// by coord_scale). The point weight is the mean score. Trailing rows/columns
/// that do not fill a tile are truncated.
WeightedPointSet pool_dense(const DenseCodePredictionSet& set, int block,
                            double coord_scale = 1.0);

}  // namespace otkd
