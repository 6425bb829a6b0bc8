#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "l2i/errors.hpp"
#include "l2i/geometry.hpp"
#include "oracles.hpp"

using namespace l2i;

namespace {

double corner_set_distance(const Corners& a, const Corners& b) {
  double worst = 0.0;
  for (const auto& p : a) {
    double best = 1e300;
    for (const auto& q : b) best = std::min(best, (p - q).norm());
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace

TEST_CASE("canonicalize keeps w >= h and theta in [-pi/2, pi/2)") {
  Rng rng(3);
  std::uniform_real_distribution<double> ext(0.5, 50.0), ang(-10.0, 10.0), pos(-100.0, 100.0);
  for (int i = 0; i < 500; ++i) {
    const OrientedBox raw{pos(rng), pos(rng), ext(rng), ext(rng), ang(rng)};
    const OrientedBox c = canonicalize_obb(raw);
    CHECK(c.w >= c.h);
    CHECK(c.theta >= -kPi / 2);
    CHECK(c.theta < kPi / 2);
    const OrientedBox again = canonicalize_obb(c);
    CHECK(again.cx == c.cx);
    CHECK(again.w == c.w);
    CHECK(again.h == c.h);
    CHECK(std::abs(again.theta - c.theta) <= 1e-12);
    CHECK(corner_set_distance(obb_corners(raw), obb_corners(c)) <= 1e-9);
  }
}

TEST_CASE("canonicalize swaps extents and rotates by a quarter turn") {
  const OrientedBox c = canonicalize_obb(10, 10, 4, 8, 0.0);
  CHECK(c.w == 8);
  CHECK(c.h == 4);
  CHECK(c.theta == doctest::Approx(-kPi / 2));  // pi/2 wraps to -pi/2
}

TEST_CASE("canonicalize rejects bad extents and non-finite input") {
  CHECK_THROWS_AS(canonicalize_obb(0, 0, 0, 1, 0), Error);
  try {
    canonicalize_obb(0, 0, -1, 1, 0);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NonPositiveExtent);
  }
  try {
    canonicalize_obb(0, std::nan(""), 1, 1, 0);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NonFiniteInput);
  }
}

TEST_CASE("corner ingestion rotates about the center") {
  const OrientedBox b = obb_from_corner(10, 20, 30, 10, 0.3);
  CHECK(b.cx == doctest::Approx(25));
  CHECK(b.cy == doctest::Approx(25));
  CHECK(b.theta == doctest::Approx(0.3));
}

TEST_CASE("corners are counterclockwise and polygon area matches w*h") {
  const OrientedBox b{5, 5, 6, 2, 0.4};
  const auto c = obb_corners(b);
  CHECK(polygon_area({c.begin(), c.end()}) == doctest::Approx(12.0));
}

TEST_CASE("rotated iou special cases") {
  const OrientedBox a{10, 10, 8, 4, 0.3};
  CHECK(rotated_iou(a, a) == doctest::Approx(1.0));
  CHECK(rotated_iou(a, OrientedBox{100, 100, 8, 4, 0.3}) == 0.0);
  // Same axis-aligned boxes half shifted along x: overlap 4x4 of 8x4 boxes.
  CHECK(rotated_iou(OrientedBox{0, 0, 8, 4, 0}, OrientedBox{4, 0, 8, 4, 0}) == doctest::Approx(16.0 / 48.0));
  // Cross of two 10x2 bars: intersection 4, union 36.
  CHECK(rotated_iou(OrientedBox{0, 0, 10, 2, 0}, OrientedBox{0, 0, 10, 2, -kPi / 2}) ==
        doctest::Approx(4.0 / 36.0));
}

TEST_CASE("rotated iou agrees with area sampling") {
  Rng rng(5);
  std::uniform_real_distribution<double> pos(20, 40), ext(4, 20), ang(-kPi / 2, kPi / 2);
  for (int i = 0; i < 20; ++i) {
    const OrientedBox a = canonicalize_obb(pos(rng), pos(rng), ext(rng), ext(rng), ang(rng));
    const OrientedBox b = canonicalize_obb(pos(rng), pos(rng), ext(rng), ext(rng), ang(rng));
    CHECK(std::abs(rotated_iou(a, b) - oracle::raster_iou(a, b, 800)) <= 1e-3);
    CHECK(rotated_iou(a, b) == doctest::Approx(rotated_iou(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("sigmoid mask closed-form values") {
  const OrientedBox b{32, 32, 20, 10, 0.6};
  CHECK(sigmoid_mask_value(b, 32, 32) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  // End of the long axis lies on the unit ellipse.
  const double ex = 32 + 10 * std::cos(0.6), ey = 32 + 10 * std::sin(0.6);
  CHECK(sigmoid_mask_value(b, ex, ey) == doctest::Approx(0.5).epsilon(1e-12));
  const double sx = 32 - 5 * std::sin(0.6), sy = 32 + 5 * std::cos(0.6);
  CHECK(sigmoid_mask_value(b, sx, sy) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sigmoid mask raster samples pixel centers") {
  const OrientedBox b{4, 4, 4, 2, 0};
  const InstanceMask m = rasterize_sigmoid_mask(b, 8, 8);
  CHECK(m.rows() == 8);
  CHECK(m.values(3, 3) == doctest::Approx(sigmoid_mask_value(b, 3.5, 3.5)));
  CHECK_THROWS_AS(rasterize_sigmoid_mask(OrientedBox{20, 4, 4, 2, 0}, 8, 8), Error);
}

TEST_CASE("mask downsampling averages blocks") {
  const InstanceMask m = rasterize_sigmoid_mask(OrientedBox{8, 8, 10, 6, 0.2}, 16, 16);
  const InstanceMask d = downsample_mask(m, 4);
  CHECK(d.rows() == 4);
  CHECK(d.values(1, 2) == doctest::Approx(m.values.block(4, 8, 4, 4).mean()));
  CHECK(d.values.mean() == doctest::Approx(m.values.mean()));
  CHECK_THROWS_AS(downsample_mask(m, 3), Error);
}

TEST_CASE("region grid labels for K = 4") {
  const RegionGrid g(512, 4);
  CHECK(g.central_begin() == 1);
  CHECK(assign_block({256, 256}, g) == BlockLabel::Center);
  CHECK(assign_block({10, 10}, g) == BlockLabel::UpperLeft);
  CHECK(assign_block({500, 10}, g) == BlockLabel::UpperRight);
  CHECK(assign_block({256, 10}, g) == BlockLabel::Upper);
  CHECK(assign_block({256, 500}, g) == BlockLabel::Lower);
  CHECK(assign_block({10, 256}, g) == BlockLabel::Left);
  CHECK(assign_block({512, 256}, g) == BlockLabel::Right);
  CHECK(assign_block({512, 512}, g) == BlockLabel::LowerRight);
  CHECK(assign_block({128, 128}, g) == BlockLabel::Center);  // half-open lower bound
  CHECK(assign_block({383.9, 200}, g) == BlockLabel::Center);
  CHECK(assign_block({384, 200}, g) == BlockLabel::Right);
  CHECK_THROWS_AS(assign_block({-1, 3}, g), Error);
  CHECK_THROWS_AS(RegionGrid(512, 2), Error);
}

TEST_CASE("region grid odd K keeps a centered interior") {
  const RegionGrid g(90, 5);
  CHECK(g.central_span() == 2);
  CHECK(g.is_central(1, 2));
  CHECK(g.is_central(2, 2));
  CHECK_FALSE(g.is_central(3, 3));
}

TEST_CASE("orientation quantization") {
  CHECK(quantize_orientation(0.0) == OrientationAxis::EastWest);
  CHECK(quantize_orientation(deg_to_rad(30)) == OrientationAxis::NorthwestSoutheast);
  CHECK(quantize_orientation(deg_to_rad(-36)) == OrientationAxis::NortheastSouthwest);
  CHECK(quantize_orientation(deg_to_rad(-89)) == OrientationAxis::NorthSouth);
  CHECK(quantize_orientation(deg_to_rad(22.5)) == OrientationAxis::EastWest);  // tie to smaller |angle|
  CHECK(to_string(OrientationAxis::NorthSouth) == "north-south");
}
