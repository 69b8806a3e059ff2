#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lvseg/image.hpp"
#include "lvseg/volume.hpp"

namespace lvseg::slicer {

using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Rigid frame that aligns the user's base-to-apex axis with +x.
struct AxisFrame {
  Vec3 apex = Vec3::Zero();
  Vec3 base = Vec3::Zero();
  Vec3 v_hat = Vec3::UnitX();  ///< unit vector base -> apex
  Vec3 u_hat = Vec3::UnitX();
  double phi = 0.0;            ///< angle between u_hat and v_hat, rad
  Vec3 r_vec = Vec3::Zero();   ///< u_hat x v_hat
  Mat4 T_u = Mat4::Identity();
  Vec3 origin = Vec3::Zero();  ///< slicing origin, midpoint of apex and base

  Mat3 rotation() const { return T_u.topLeftCorner<3, 3>(); }
  double length() const { return (apex - base).norm(); }
};

/// Rodrigues rotation matrix for a unit axis and an angle.
Mat3 axis_angle(const Vec3& unit_axis, double angle);

AxisFrame build_axis_frame(const Vec3& apex, const Vec3& base);

/// Pixel raster of a slice: spacing in mm and the pixel that maps onto the
/// slicing origin. Column index runs along the LV axis (towards the apex),
/// row index along the in-plane radial direction.
struct SliceGeometry {
  double spacing = 1.0;
  int width = 0;
  int height = 0;
  double center_col = 0.0;
  double center_row = 0.0;
};

/// In-plane spacing = smallest voxel spacing; square extent covering every
/// voxel of the volume as seen from the slicing origin.
SliceGeometry slice_geometry_for(const Volume3D& vol, const AxisFrame& axis);

struct SlicePlane {
  double angle_deg = 0.0;
  Mat4 T_F = Mat4::Identity();
  Vec3 origin = Vec3::Zero();
  SliceGeometry raster;

  Mat3 rotation() const { return T_F.topLeftCorner<3, 3>(); }
  /// Physical unit directions of the column axis, row axis and plane normal.
  Vec3 axis_dir() const { return rotation().row(0).transpose(); }
  Vec3 radial_dir() const { return rotation().row(1).transpose(); }
  Vec3 normal() const { return rotation().row(2).transpose(); }

  /// In-plane mm coordinates (a along axis, b radial) <-> pixel coordinates.
  Vec2 pixel_to_plane(const Vec2& px) const;
  Vec2 plane_to_pixel(const Vec2& ab) const;
  Vec3 pixel_to_mm(const Vec2& px) const;
  /// Orthogonal projection onto the plane, returned in pixel coordinates.
  Vec2 mm_to_pixel(const Vec3& p) const;
  /// Signed distance of a physical point from the plane, mm.
  double plane_offset(const Vec3& p) const { return normal().dot(p - origin); }
};

/// T_F: rotate about the slicing origin so the LV axis lies on +x and the
/// slice at angle_deg lies in the transformed xy-plane.
SlicePlane make_slice_plane(const AxisFrame& axis, double angle_deg, const SliceGeometry& raster);

/// 180 / theta_d planes at 0, theta_d, ..., 180 - theta_d.
std::vector<SlicePlane> make_slice_planes(const AxisFrame& axis, double theta_d,
                                          const SliceGeometry& raster);

/// Number of angular slices for a spacing; throws unless theta_d divides 180.
int angular_slice_count(double theta_d);

/// Sub-raster covering the in-plane box [a_min, a_max] x [b_min, b_max] mm.
SlicePlane crop(const SlicePlane& plane, double a_min, double a_max, double b_min, double b_max);

struct Slice2D {
  Image2D pixels;
  SlicePlane plane;
  int frame_index = 0;
};

/// Trilinear resampling of the volume on the plane; zero outside the volume.
Slice2D extract_slice(const Volume3D& vol, const SlicePlane& plane, int frame_index = 0);

std::vector<Vec3> lift_contour(std::span<const Vec2> points2d, const SlicePlane& plane);
std::vector<Vec2> project_contour(std::span<const Vec3> points3d, const SlicePlane& plane);

}  // namespace lvseg::slicer
