#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace lvseg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Dense 2D scalar grid, row-major, x fastest. Node (x, y) sits at pixel
/// coordinate (x, y); the continuous domain is [0, w-1] x [0, h-1].
struct Image2D {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image2D() = default;
  Image2D(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const { return data.size(); }
  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const Image2D& o) const { return width == o.width && height == o.height; }
};

/// Bilinear sample with the position clamped into the domain. Exact at nodes.
double sample_bilinear(const Image2D& img, double x, double y);

/// Bilinear sample and its exact (piecewise) spatial derivative.
double sample_bilinear_grad(const Image2D& img, double x, double y, double& dx, double& dy);

/// Separable Gaussian blur with mirrored borders; sigma <= 0 returns a copy.
Image2D gaussian_blur(const Image2D& img, double sigma);

/// Resample onto a (w, h) grid with corners aligned to the source corners.
Image2D resample_corner_aligned(const Image2D& img, int w, int h);

}  // namespace lvseg
