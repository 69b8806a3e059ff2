#include "lvseg/slicer.hpp"

#include <cmath>
#include <numbers>

#include "lvseg/errors.hpp"

namespace lvseg::slicer {

Mat3 axis_angle(const Vec3& k, double angle) {
  Mat3 K;
  K << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Mat3::Identity() + std::sin(angle) * K + (1.0 - std::cos(angle)) * K * K;
}

AxisFrame build_axis_frame(const Vec3& apex, const Vec3& base) {
  const Vec3 d = apex - base;
  if (!(d.norm() > 0.0)) throw ValidationError("axis.degenerate", "apex and base coincide");
  AxisFrame f;
  f.apex = apex;
  f.base = base;
  f.v_hat = d / d.norm();
  f.u_hat = Vec3::UnitX();
  f.phi = std::acos(std::clamp(f.u_hat.dot(f.v_hat), -1.0, 1.0));
  f.r_vec = f.u_hat.cross(f.v_hat);
  f.origin = 0.5 * (apex + base);

  Mat3 R = Mat3::Identity();
  const double rn = f.r_vec.norm();
  if (rn > 1e-12) {
    // Rotating by -phi about r = u x v carries v onto u.
    R = axis_angle(f.r_vec / rn, -f.phi);
  } else if (f.v_hat.x() < 0.0) {
    // Anti-parallel: any perpendicular axis works; fix it to +y.
    R = axis_angle(Vec3::UnitY(), std::numbers::pi);
  }
  f.T_u.setIdentity();
  f.T_u.topLeftCorner<3, 3>() = R;
  return f;
}

SliceGeometry slice_geometry_for(const Volume3D& vol, const AxisFrame& axis) {
  SliceGeometry g;
  g.spacing = std::min({vol.spacing[0], vol.spacing[1], vol.spacing[2]});
  const Vec3 ext = vol.extent_mm();
  double radius = 0.0;
  for (int c = 0; c < 8; ++c) {
    const Vec3 corner((c & 1) ? ext.x() : 0.0, (c & 2) ? ext.y() : 0.0, (c & 4) ? ext.z() : 0.0);
    radius = std::max(radius, (corner - axis.origin).norm());
  }
  const int half = static_cast<int>(std::ceil(radius / g.spacing));
  g.width = g.height = 2 * half + 1;
  g.center_col = g.center_row = half;
  return g;
}

Vec2 SlicePlane::pixel_to_plane(const Vec2& px) const {
  return {(px.x() - raster.center_col) * raster.spacing, (px.y() - raster.center_row) * raster.spacing};
}

Vec2 SlicePlane::plane_to_pixel(const Vec2& ab) const {
  return {ab.x() / raster.spacing + raster.center_col, ab.y() / raster.spacing + raster.center_row};
}

Vec3 SlicePlane::pixel_to_mm(const Vec2& px) const {
  const Vec2 ab = pixel_to_plane(px);
  // T_F^-1 applied to origin + (a, b, 0).
  return origin + rotation().transpose() * Vec3(ab.x(), ab.y(), 0.0);
}

Vec2 SlicePlane::mm_to_pixel(const Vec3& p) const {
  const Vec3 q = rotation() * (p - origin);
  return plane_to_pixel({q.x(), q.y()});
}

SlicePlane make_slice_plane(const AxisFrame& axis, double angle_deg, const SliceGeometry& raster) {
  const double t = angle_deg * std::numbers::pi / 180.0;
  Mat4 T_theta = Mat4::Identity();
  T_theta(1, 1) = std::cos(t);
  T_theta(1, 2) = -std::sin(t);
  T_theta(2, 1) = std::sin(t);
  T_theta(2, 2) = std::cos(t);
  Mat4 to_origin = Mat4::Identity();
  to_origin.topRightCorner<3, 1>() = -axis.origin;
  Mat4 from_origin = Mat4::Identity();
  from_origin.topRightCorner<3, 1>() = axis.origin;

  SlicePlane p;
  p.angle_deg = angle_deg;
  p.origin = axis.origin;
  p.raster = raster;
  p.T_F = from_origin * T_theta * axis.T_u * to_origin;
  return p;
}

int angular_slice_count(double theta_d) {
  if (!(theta_d > 0.0)) throw ValidationError("theta_d.positive", "angular spacing must be > 0");
  const double n = 180.0 / theta_d;
  const double rn = std::round(n);
  if (std::abs(n - rn) > 1e-9 || rn < 1)
    throw ValidationError("theta_d.divides_180", "angular spacing must divide 180 degrees");
  return static_cast<int>(rn);
}

std::vector<SlicePlane> make_slice_planes(const AxisFrame& axis, double theta_d,
                                          const SliceGeometry& raster) {
  const int n = angular_slice_count(theta_d);
  std::vector<SlicePlane> planes;
  planes.reserve(n);
  for (int i = 0; i < n; ++i) planes.push_back(make_slice_plane(axis, i * theta_d, raster));
  return planes;
}

SlicePlane crop(const SlicePlane& plane, double a_min, double a_max, double b_min, double b_max) {
  SlicePlane out = plane;
  const double s = plane.raster.spacing;
  const int c0 = static_cast<int>(std::floor(a_min / s));
  const int c1 = static_cast<int>(std::ceil(a_max / s));
  const int r0 = static_cast<int>(std::floor(b_min / s));
  const int r1 = static_cast<int>(std::ceil(b_max / s));
  out.raster.width = c1 - c0 + 1;
  out.raster.height = r1 - r0 + 1;
  out.raster.center_col = -c0;
  out.raster.center_row = -r0;
  return out;
}

Slice2D extract_slice(const Volume3D& vol, const SlicePlane& plane, int frame_index) {
  Slice2D s;
  s.plane = plane;
  s.frame_index = frame_index;
  s.pixels = Image2D(plane.raster.width, plane.raster.height);
  const Mat3 Rt = plane.rotation().transpose();
  const Vec3 col_step = Rt.col(0) * plane.raster.spacing;
  for (int y = 0; y < plane.raster.height; ++y) {
    const Vec3 row0 = plane.pixel_to_mm({0.0, static_cast<double>(y)});
    for (int x = 0; x < plane.raster.width; ++x) {
      const double v = vol.sample(row0 + x * col_step);
      s.pixels.at(x, y) = std::clamp(v, 0.0, 1.0);
    }
  }
  return s;
}

std::vector<Vec3> lift_contour(std::span<const Vec2> points2d, const SlicePlane& plane) {
  std::vector<Vec3> out;
  out.reserve(points2d.size());
  for (const auto& p : points2d) out.push_back(plane.pixel_to_mm(p));
  return out;
}

std::vector<Vec2> project_contour(std::span<const Vec3> points3d, const SlicePlane& plane) {
  std::vector<Vec2> out;
  out.reserve(points3d.size());
  for (const auto& p : points3d) out.push_back(plane.mm_to_pixel(p));
  return out;
}

}  // namespace lvseg::slicer
