#include <doctest.h>

#include "otkd/error.hpp"
#include "otkd/point_set.hpp"

using namespace otkd;

namespace {

WeightedPointSet make_set(std::initializer_list<double> weights) {
  WeightedPointSet s;
  const Eigen::Index n = static_cast<Eigen::Index>(weights.size());
  s.points.setZero(n, 2);
  s.weights.resize(n);
  Eigen::Index i = 0;
  for (double w : weights) {
    s.points(i, 0) = static_cast<double>(i);
    s.weights[i] = w;
    ++i;
  }
  return s;
}

}  // namespace

TEST_CASE("unit-mass normalization rescales to total mass 1") {
  const auto out = normalize_weights(make_set({2.0, 2.0}), WeightMode::unit_mass);
  REQUIRE(out.size() == 2);
  CHECK(out.weights[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.weights[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(out.weights.sum() - 1.0) <= 1e-12);
}

TEST_CASE("zero-weight points are dropped together with their mass") {
  const auto out = normalize_weights(make_set({1.0, 0.0, 1.0}), WeightMode::unit_mass, 1e-6);
  REQUIRE(out.size() == 2);
  CHECK(out.weights[0] == doctest::Approx(0.5));
  CHECK(out.weights[1] == doctest::Approx(0.5));
  CHECK(out.points(0, 0) == 0.0);
  CHECK(out.points(1, 0) == 2.0);  // the surviving points, in order
}

TEST_CASE("all-zero weights cannot be normalized") {
  CHECK_THROWS_WITH_AS(normalize_weights(make_set({0.0, 0.0}), WeightMode::unit_mass),
                       doctest::Contains("zero"), Error);
}

TEST_CASE("raw mode passes weights through unchanged") {
  const auto in = make_set({3.0, 0.0, 1.0});
  const auto out = normalize_weights(in, WeightMode::raw);
  CHECK(out.weights == in.weights);
  CHECK(out.points == in.points);
}

TEST_CASE("unit-mass sum stays 1 for random weights") {
  std::uint64_t state = 42;
  auto next = [&] {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return static_cast<double>(state >> 11) * 0x1.0p-53;
  };
  for (int trial = 0; trial < 50; ++trial) {
    WeightedPointSet s;
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(next() * 20);
    s.points.setZero(n, 3);
    s.weights.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) s.weights[i] = next();
    const auto out = normalize_weights(s, WeightMode::unit_mass);
    CHECK(std::abs(out.weights.sum() - 1.0) <= 1e-12);
    CHECK((out.weights.array() > 0).all());
  }
}

TEST_CASE("validation rejects malformed sets") {
  WeightedPointSet s = make_set({1.0, 1.0});
  s.weights[0] = -0.5;
  CHECK_THROWS_AS(validate(s), Error);
  s = make_set({1.0, 1.0});
  s.points(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(validate(s), Error);
}
