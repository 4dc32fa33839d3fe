#include <doctest.h>

#include <random>

#include "otkd/error.hpp"
#include "otkd/io.hpp"

using namespace otkd;

namespace {

KeypointPredictionSet random_keypoints(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  KeypointPredictionSet set;
  set.image_size = {640, 480};
  set.num_keypoints = 8;
  const int n = 1 + static_cast<int>(rng() % 6);
  for (int i = 0; i < n; ++i) {
    KeypointCell cell;
    cell.cell_xy = {static_cast<int>(rng() % 32), static_cast<int>(rng() % 32)};
    cell.score = unit(rng);
    for (int k = 0; k < 8; ++k)
      cell.votes.push_back({640.0 * unit(rng), 480.0 * unit(rng)});
    set.cells.push_back(cell);
  }
  return set;
}

DenseCodePredictionSet random_dense(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  DenseCodePredictionSet set;
  set.grid_size = {4, 3};
  set.code_dim = 16;
  for (int i = 0; i < 12; ++i) {
    DenseCell cell;
    cell.score = unit(rng);
    for (int c = 0; c < 16; ++c) cell.code.push_back(unit(rng));
    set.cells.push_back(cell);
  }
  return set;
}

}  // namespace

TEST_CASE("keypoint files round-trip bit-exactly") {
  std::mt19937_64 rng(2027);
  for (int trial = 0; trial < 20; ++trial) {
    const PredictionFile original = random_keypoints(rng);
    const std::string text = prediction_to_json(original);
    const PredictionFile parsed = parse_prediction_json(text);
    REQUIRE(is_keypoints(parsed));
    const auto& in = std::get<KeypointPredictionSet>(original);
    const auto& out = std::get<KeypointPredictionSet>(parsed);
    CHECK(out.image_size == in.image_size);
    CHECK(out.num_keypoints == in.num_keypoints);
    REQUIRE(out.cells.size() == in.cells.size());
    for (std::size_t i = 0; i < in.cells.size(); ++i) {
      CHECK(out.cells[i].cell_xy == in.cells[i].cell_xy);
      CHECK(out.cells[i].score == in.cells[i].score);  // bit-exact
      for (std::size_t k = 0; k < in.cells[i].votes.size(); ++k)
        CHECK(out.cells[i].votes[k] == in.cells[i].votes[k]);
    }
    // second serialization is byte-identical
    CHECK(prediction_to_json(parsed) == text);
  }
}

TEST_CASE("dense files round-trip bit-exactly") {
  std::mt19937_64 rng(2028);
  const PredictionFile original = random_dense(rng);
  const std::string text = prediction_to_json(original);
  const PredictionFile parsed = parse_prediction_json(text);
  REQUIRE_FALSE(is_keypoints(parsed));
  const auto& in = std::get<DenseCodePredictionSet>(original);
  const auto& out = std::get<DenseCodePredictionSet>(parsed);
  CHECK(out.grid_size == in.grid_size);
  CHECK(out.code_dim == in.code_dim);
  REQUIRE(out.cells.size() == in.cells.size());
  for (std::size_t i = 0; i < in.cells.size(); ++i) {
    CHECK(out.cells[i].score == in.cells[i].score);
    CHECK(out.cells[i].code == in.cells[i].code);
  }
  CHECK(prediction_to_json(parsed) == text);
}

TEST_CASE("file save/load round trip") {
  std::mt19937_64 rng(2029);
  const PredictionFile original = random_keypoints(rng);
  const std::string path = "/tmp/otkd_io_test.json";
  save_prediction_file(original, path);
  const PredictionFile loaded = load_prediction_file(path);
  CHECK(prediction_to_json(loaded) == prediction_to_json(original));
}

TEST_CASE("schema violations name the offending field") {
  CHECK_THROWS_WITH_AS(parse_prediction_json("{}"), doctest::Contains("kind"), Error);
  CHECK_THROWS_WITH_AS(parse_prediction_json(R"({"kind": "wat"})"),
                       doctest::Contains("keypoints"), Error);
  CHECK_THROWS_WITH_AS(
      parse_prediction_json(
          R"({"kind": "keypoints", "image_size": [640, 480], "cells": []})"),
      doctest::Contains("num_keypoints"), Error);
  CHECK_THROWS_WITH_AS(
      parse_prediction_json(
          R"({"kind": "keypoints", "image_size": [640, 480], "num_keypoints": 1,
              "cells": [{"cell_xy": [0, 0], "score": 1.7, "votes": [[1.0, 2.0]]}]})"),
      doctest::Contains("score"), Error);
  CHECK_THROWS_WITH_AS(
      parse_prediction_json(
          R"({"kind": "keypoints", "image_size": [640, 480], "num_keypoints": 2,
              "cells": [{"cell_xy": [0, 0], "score": 0.5, "votes": [[1.0, 2.0]]}]})"),
      doctest::Contains("votes"), Error);
  CHECK_THROWS_WITH_AS(
      parse_prediction_json(
          R"({"kind": "dense_codes", "grid_size": [2, 2], "code_dim": 2,
              "cells": [{"score": 0.5, "code": [0.1, 0.2]}]})"),
      doctest::Contains("cells"), Error);
  // malformed JSON reports a position
  CHECK_THROWS_AS(parse_prediction_json("{nope"), Error);
  try {
    parse_prediction_json("{nope");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse_error);
  }
}

TEST_CASE("loading a missing file is an io error") {
  try {
    load_prediction_file("/nonexistent/otkd.json");
    FAIL("expected io_error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io_error);
  }
}

TEST_CASE("17-significant-digit formatting round-trips doubles") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = unit(rng) * std::pow(10.0, static_cast<int>(rng() % 7) - 3);
    CHECK(std::stod(format_double(v)) == v);
  }
}
