#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Dense>

namespace l2i {

using PixelMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// RGB image in [0, 1], one row per pixel in row-major raster order.
struct Image {
  int height = 0;
  int width = 0;
  PixelMatrix pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(PixelMatrix::Zero(static_cast<Eigen::Index>(h) * w, 3)) {}

  Eigen::Index index(int row, int col) const { return static_cast<Eigen::Index>(row) * width + col; }
  auto at(int row, int col) { return pixels.row(index(row, col)); }
  auto at(int row, int col) const { return pixels.row(index(row, col)); }
};

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Round-trip through 8-bit storage, matching what write_png/read_png produce.
Image quantize_8bit(const Image& image);

/// sRGB (D65) to CIE L*a*b*.
Eigen::Vector3d rgb_to_lab(const Eigen::Vector3d& rgb);

/// CIE76 color difference between two sRGB colors.
double delta_e(const Eigen::Vector3d& rgb_a, const Eigen::Vector3d& rgb_b);

}  // namespace l2i
