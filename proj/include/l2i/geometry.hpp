#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace l2i {

inline constexpr double kPi = 3.14159265358979323846;

/// Oriented rectangle in le90 form: (cx, cy) is the center in image pixels
/// (x right, y down), w the long edge, h the short edge, theta in radians in
/// [-pi/2, pi/2). Positive theta rotates clockwise on screen.
struct OrientedBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;
  double theta = 0.0;

  bool operator==(const OrientedBox&) const = default;
};

OrientedBox canonicalize_obb(double cx, double cy, double w, double h, double theta);
inline OrientedBox canonicalize_obb(const OrientedBox& b) {
  return canonicalize_obb(b.cx, b.cy, b.w, b.h, b.theta);
}

/// Ingestion helper for annotations whose (x, y) names the top-left corner of
/// the unrotated box; rotation is about the center.
OrientedBox obb_from_corner(double x, double y, double w, double h, double theta);

using Corners = std::array<Eigen::Vector2d, 4>;

/// Corners in counterclockwise order of the (x, y) frame, starting from the
/// local (-w/2, -h/2) corner.
Corners obb_corners(const OrientedBox& box);

double polygon_area(const std::vector<Eigen::Vector2d>& poly);

/// Intersection of two convex polygons given counterclockwise.
std::vector<Eigen::Vector2d> clip_convex(const std::vector<Eigen::Vector2d>& subject,
                                         const std::vector<Eigen::Vector2d>& clip);

double rotated_iou(const OrientedBox& a, const OrientedBox& b);

/// Offset (dx, dy) from the box center expressed in the box frame.
Eigen::Vector2d to_box_frame(const OrientedBox& box, double x, double y);

bool point_in_box(const OrientedBox& box, double x, double y);

/// Rotated-sigmoid instance mask: row-major H x W, pixel (r, c) sampled at
/// (c + 0.5, r + 0.5) in continuous image coordinates.
struct InstanceMask {
  Eigen::MatrixXd values;

  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }
};

/// Mask value at a continuous point. Offsets are taken from the box center
/// first, then rotated into the box frame.
double sigmoid_mask_value(const OrientedBox& box, double x, double y);

InstanceMask rasterize_sigmoid_mask(const OrientedBox& box, int height, int width);

/// Average-pool a mask by an integer factor (both sides divisible).
InstanceMask downsample_mask(const InstanceMask& mask, int factor);

enum class BlockLabel {
  Center,
  Upper,
  Lower,
  Left,
  Right,
  UpperLeft,
  UpperRight,
  LowerLeft,
  LowerRight,
};

std::string to_string(BlockLabel label);

/// K x K partition of a square image. The floor(K/2) x floor(K/2) blocks in
/// the middle form the central region. Blocks are half-open [lo, hi) except
/// the last row/column, which also owns the image edge.
class RegionGrid {
 public:
  explicit RegionGrid(int image_size, int k = 4);

  int k() const { return k_; }
  int image_size() const { return image_size_; }
  int central_begin() const { return central_begin_; }
  int central_span() const { return k_ / 2; }

  /// Column/row block index of a coordinate.
  int block_index(double coord) const;
  bool is_central(int bx, int by) const;
  BlockLabel label(int bx, int by) const;

 private:
  int image_size_;
  int k_;
  int central_begin_;
};

BlockLabel assign_block(const Eigen::Vector2d& point, const RegionGrid& grid);

enum class OrientationAxis {
  EastWest,
  NorthwestSoutheast,
  NorthSouth,
  NortheastSouthwest,
};

std::string to_string(OrientationAxis axis);

/// Nearest of four undirected axes at 45 degree spacing. Ties go to the axis
/// with the smaller absolute angle.
OrientationAxis quantize_orientation(double theta);

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

}  // namespace l2i
