#pragma once

#include <string>
#include <variant>

#include "otkd/predictions.hpp"

namespace otkd {

/// A parsed prediction file: either a keypoint set or a dense-code set.
using PredictionFile = std::variant<KeypointPredictionSet, DenseCodePredictionSet>;

/// Parses the JSON prediction-file format. Schema violations throw
/// parse_error with a field-path diagnostic.
PredictionFile parse_prediction_json(const std::string& text);
PredictionFile load_prediction_file(const std::string& path);

/// Serializes with 17 significant digits so a write/read round trip is
/// bit-exact.
std::string prediction_to_json(const PredictionFile& file);
void save_prediction_file(const PredictionFile& file, const std::string& path);

bool is_keypoints(const PredictionFile& file);

/// Formats a double with 17 significant digits (round-trip exact).
std::string format_double(double v);

}  // namespace otkd
