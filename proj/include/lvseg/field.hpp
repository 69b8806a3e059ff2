#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "lvseg/image.hpp"

namespace lvseg::reg {

/// Dense node-wise displacement on a slice grid, in pixels. phi(x) = x + u(x)
/// maps a fixed-image node to its corresponding moving-image position.
struct DeformationField2D {
  int width = 0;
  int height = 0;
  Image2D ux;
  Image2D uy;
  /// Area-change component (mean 1 for fields built by the moving-mesh model).
  Image2D monitor;
  /// Rotational (curl) component.
  Image2D rotation;

  bool converged = true;
  int iterations = 0;
  double initial_similarity = 0.0;
  double final_similarity = 0.0;

  static DeformationField2D identity(int w, int h);
  static DeformationField2D uniform(int w, int h, double dx, double dy);

  Vec2 displacement(double x, double y) const {
    return {sample_bilinear(ux, x, y), sample_bilinear(uy, x, y)};
  }
  double max_displacement() const;
};

/// det(grad phi) by central differences at interior nodes (boundary = NaN).
Image2D jacobian_determinant(const DeformationField2D& f);
double min_interior_jacobian(const DeformationField2D& f);
/// curl of the displacement, central differences at interior nodes.
Image2D displacement_curl(const DeformationField2D& f);

/// moving(phi(x)) for every fixed-grid node.
Image2D warp_image(const Image2D& moving, const DeformationField2D& f);

struct WarpResult {
  std::vector<Vec2> points;
  int clamped = 0;  ///< inputs outside the grid, clamped to the boundary
};

/// Displaces each point by the bilinearly interpolated field; order kept.
WarpResult warp_points(std::span<const Vec2> points, const DeformationField2D& f);

/// (f o g)(x) = f(g(x)): resamples f at the g-displaced nodes. Throws
/// RegistrationError if the composed Jacobian is not positive everywhere.
DeformationField2D compose(const DeformationField2D& f, const DeformationField2D& g);

/// Debug dump for visualization.
nlohmann::json field_to_json(const DeformationField2D& f);

}  // namespace lvseg::reg
