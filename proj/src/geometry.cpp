#include "l2i/geometry.hpp"

#include <cmath>

#include "l2i/errors.hpp"

namespace l2i {

namespace {

constexpr double kHalfPi = kPi / 2.0;

double wrap_half_open(double theta) {
  if (theta >= -kHalfPi && theta < kHalfPi) return theta;
  double wrapped = theta - kPi * std::floor((theta + kHalfPi) / kPi);
  // floor() can land one period off when theta + pi/2 rounds onto a multiple of pi.
  while (wrapped >= kHalfPi) wrapped -= kPi;
  while (wrapped < -kHalfPi) wrapped += kPi;
  return wrapped;
}

}  // namespace

OrientedBox canonicalize_obb(double cx, double cy, double w, double h, double theta) {
  if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(w) || !std::isfinite(h) ||
      !std::isfinite(theta)) {
    throw Error(Errc::NonFiniteInput, "box parameters must be finite");
  }
  if (w <= 0.0 || h <= 0.0) {
    throw Error(Errc::NonPositiveExtent, "box extents must be positive");
  }
  if (w < h) {
    std::swap(w, h);
    theta += kHalfPi;
  }
  return {cx, cy, w, h, wrap_half_open(theta)};
}

OrientedBox obb_from_corner(double x, double y, double w, double h, double theta) {
  return canonicalize_obb(x + w / 2.0, y + h / 2.0, w, h, theta);
}

Corners obb_corners(const OrientedBox& box) {
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  const double hw = box.w / 2.0;
  const double hh = box.h / 2.0;
  const std::array<Eigen::Vector2d, 4> local = {Eigen::Vector2d(-hw, -hh), Eigen::Vector2d(hw, -hh),
                                                Eigen::Vector2d(hw, hh), Eigen::Vector2d(-hw, hh)};
  Eigen::Matrix2d rot;
  rot << c, -s, s, c;
  Corners out;
  for (int i = 0; i < 4; ++i) out[i] = Eigen::Vector2d(box.cx, box.cy) + rot * local[i];
  return out;
}

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    twice += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * twice;
}

std::vector<Eigen::Vector2d> clip_convex(const std::vector<Eigen::Vector2d>& subject,
                                         const std::vector<Eigen::Vector2d>& clip) {
  // Sutherland-Hodgman against each counterclockwise clip edge.
  std::vector<Eigen::Vector2d> output = subject;
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !output.empty(); ++e) {
    const Eigen::Vector2d a = clip[e];
    const Eigen::Vector2d b = clip[(e + 1) % m];
    const Eigen::Vector2d edge = b - a;
    auto side = [&](const Eigen::Vector2d& p) {
      const Eigen::Vector2d ap = p - a;
      return edge.x() * ap.y() - edge.y() * ap.x();
    };
    std::vector<Eigen::Vector2d> input;
    input.swap(output);
    const std::size_t n = input.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d& cur = input[i];
      const Eigen::Vector2d& prev = input[(i + n - 1) % n];
      const double s_cur = side(cur);
      const double s_prev = side(prev);
      if (s_cur >= 0.0) {
        if (s_prev < 0.0) output.push_back(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
        output.push_back(cur);
      } else if (s_prev >= 0.0) {
        output.push_back(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
      }
    }
  }
  return output;
}

double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
  const Corners ca = obb_corners(a);
  const Corners cb = obb_corners(b);
  const std::vector<Eigen::Vector2d> pa(ca.begin(), ca.end());
  const std::vector<Eigen::Vector2d> pb(cb.begin(), cb.end());
  const double area_a = a.w * a.h;
  const double area_b = b.w * b.h;
  // Clip the smaller-indexed argument order-independently so the result is symmetric.
  const double inter_ab = std::max(0.0, polygon_area(clip_convex(pa, pb)));
  const double inter_ba = std::max(0.0, polygon_area(clip_convex(pb, pa)));
  const double inter = 0.5 * (inter_ab + inter_ba);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Eigen::Vector2d to_box_frame(const OrientedBox& box, double x, double y) {
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  const double dx = x - box.cx;
  const double dy = y - box.cy;
  return {c * dx + s * dy, -s * dx + c * dy};
}

bool point_in_box(const OrientedBox& box, double x, double y) {
  const Eigen::Vector2d local = to_box_frame(box, x, y);
  return std::abs(local.x()) <= box.w / 2.0 && std::abs(local.y()) <= box.h / 2.0;
}

double sigmoid_mask_value(const OrientedBox& box, double x, double y) {
  const double s1 = box.w / 2.0;
  const double s2 = box.h / 2.0;
  const Eigen::Vector2d local = to_box_frame(box, x, y);
  const double q = local.x() * local.x() / (s1 * s1) + local.y() * local.y() / (s2 * s2);
  return 1.0 / (1.0 + std::exp(-1.0 + q));
}

InstanceMask rasterize_sigmoid_mask(const OrientedBox& box, int height, int width) {
  if (height < 1 || width < 1) throw Error(Errc::ShapeMismatch, "mask raster must be at least 1x1");
  if (box.cx < 0.0 || box.cx > width || box.cy < 0.0 || box.cy > height) {
    throw Error(Errc::OutOfImage, "box center outside raster");
  }
  const double s1 = box.w / 2.0;
  const double s2 = box.h / 2.0;
  if (!(s1 * s1 > 0.0) || !(s2 * s2 > 0.0)) {
    throw Error(Errc::DegenerateBox, "sigma underflows at raster scale");
  }
  InstanceMask mask;
  mask.values.resize(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) mask.values(r, c) = sigmoid_mask_value(box, c + 0.5, r + 0.5);
  }
  return mask;
}

InstanceMask downsample_mask(const InstanceMask& mask, int factor) {
  if (factor < 1 || mask.rows() % factor != 0 || mask.cols() % factor != 0) {
    throw Error(Errc::ResolutionMismatch, "mask size not divisible by pooling factor");
  }
  if (factor == 1) return mask;
  const int h = mask.rows() / factor;
  const int w = mask.cols() / factor;
  InstanceMask out;
  out.values.resize(h, w);
  const double inv = 1.0 / (factor * factor);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      out.values(r, c) = mask.values.block(r * factor, c * factor, factor, factor).sum() * inv;
    }
  }
  return out;
}

std::string to_string(BlockLabel label) {
  switch (label) {
    case BlockLabel::Center: return "center";
    case BlockLabel::Upper: return "upper";
    case BlockLabel::Lower: return "lower";
    case BlockLabel::Left: return "left";
    case BlockLabel::Right: return "right";
    case BlockLabel::UpperLeft: return "upper-left";
    case BlockLabel::UpperRight: return "upper-right";
    case BlockLabel::LowerLeft: return "lower-left";
    case BlockLabel::LowerRight: return "lower-right";
  }
  return "center";
}

RegionGrid::RegionGrid(int image_size, int k) : image_size_(image_size), k_(k) {
  if (image_size < 1) throw Error(Errc::InvalidGrid, "image size must be positive");
  // K = 2 would put the single central block in a corner.
  if (k < 3) throw Error(Errc::InvalidGrid, "grid needs K >= 3 for a strictly interior center");
  central_begin_ = (k_ - k_ / 2) / 2;
}

int RegionGrid::block_index(double coord) const {
  const int idx = static_cast<int>(std::floor(coord * k_ / image_size_));
  return std::min(idx, k_ - 1);
}

bool RegionGrid::is_central(int bx, int by) const {
  const int lo = central_begin_;
  const int hi = central_begin_ + central_span();
  return bx >= lo && bx < hi && by >= lo && by < hi;
}

BlockLabel RegionGrid::label(int bx, int by) const {
  const int lo = central_begin_;
  const int hi = central_begin_ + central_span();
  const int horiz = bx < lo ? -1 : (bx >= hi ? 1 : 0);
  const int vert = by < lo ? -1 : (by >= hi ? 1 : 0);
  if (vert < 0) return horiz < 0 ? BlockLabel::UpperLeft : horiz > 0 ? BlockLabel::UpperRight : BlockLabel::Upper;
  if (vert > 0) return horiz < 0 ? BlockLabel::LowerLeft : horiz > 0 ? BlockLabel::LowerRight : BlockLabel::Lower;
  return horiz < 0 ? BlockLabel::Left : horiz > 0 ? BlockLabel::Right : BlockLabel::Center;
}

BlockLabel assign_block(const Eigen::Vector2d& point, const RegionGrid& grid) {
  const double size = grid.image_size();
  if (!(point.x() >= 0.0 && point.x() <= size && point.y() >= 0.0 && point.y() <= size)) {
    throw Error(Errc::OutOfImage, "point outside image");
  }
  return grid.label(grid.block_index(point.x()), grid.block_index(point.y()));
}

std::string to_string(OrientationAxis axis) {
  switch (axis) {
    case OrientationAxis::EastWest: return "east-west";
    case OrientationAxis::NorthwestSoutheast: return "northwest-southeast";
    case OrientationAxis::NorthSouth: return "north-south";
    case OrientationAxis::NortheastSouthwest: return "northeast-southwest";
  }
  return "east-west";
}

OrientationAxis quantize_orientation(double theta) {
  // Candidates in order of increasing |angle| so that ties keep the first.
  struct Axis {
    double deg;
    OrientationAxis label;
  };
  constexpr Axis axes[] = {{0.0, OrientationAxis::EastWest},
                           {45.0, OrientationAxis::NorthwestSoutheast},
                           {-45.0, OrientationAxis::NortheastSouthwest},
                           {90.0, OrientationAxis::NorthSouth}};
  const double deg = rad_to_deg(theta);
  OrientationAxis best = OrientationAxis::EastWest;
  double best_dist = 1e300;
  for (const Axis& a : axes) {
    double d = std::fmod(std::abs(deg - a.deg), 180.0);
    d = std::min(d, 180.0 - d);
    if (d < best_dist - 1e-12) {
      best_dist = d;
      best = a.label;
    }
  }
  return best;
}

}  // namespace l2i
