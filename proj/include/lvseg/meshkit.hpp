#pragma once

#include "lvseg/contours.hpp"
#include "lvseg/slicer.hpp"
#include "lvseg/volume.hpp"

namespace lvseg::mesh {

/// Ring vertices closer than this to the apex vertex collapse onto it.
inline constexpr double kApexMergeMm = 0.5;

/// Stitches corresponded contours into a surface. Each contour contributes two
/// meridians (its +radial and -radial halves); meridians are ordered by angle
/// over 360 degrees and the last ring is fanned to a single apex vertex.
/// Triangles face outward.
SurfaceMesh build_mesh(const ContourSet3D& contours);

/// Boundary edges of an open mesh joined into one loop, in traversal order.
/// Throws ValidationError (mesh.cap) if they do not form a single cycle.
std::vector<int> boundary_loop(const SurfaceMesh& m);

/// Mesh closed by a fan from the boundary-loop centroid.
SurfaceMesh capped(const SurfaceMesh& m);

/// Enclosed volume in mL after capping; closed meshes are used as-is.
double mesh_volume(const SurfaceMesh& m);

/// Signed volume in mm^3 of an already closed mesh.
double signed_volume_mm3(const SurfaceMesh& m);

/// Contours at every theta_d degrees rebuilt from the mesh meridians.
ContourSet3D extract_subset(const SurfaceMesh& m, double theta_d);

struct EllipsoidModel {
  Vec3 center = Vec3::Zero();
  Vec3 semi_axes = Vec3::Ones();           ///< (a, b, c) mm
  slicer::Mat3 orientation = slicer::Mat3::Identity();  ///< columns x, y, z; z points apex -> base
  double cut_z = 0.0;                      ///< truncation height along z, mm

  /// Physical point at ellipsoid-local coordinates.
  Vec3 to_world(const Vec3& local) const { return center + orientation * local; }
};

struct EllipsoidFit {
  EllipsoidModel model;
  SurfaceMesh mesh;
};

/// Truncated-ellipsoid reference model from the axis and the seed contours of
/// one phase. Centered on the base point with z along the LV axis; x and y
/// semi-axes are half the widest opposing-side distance of the theta0 and
/// theta90 contours, c is the base-apex distance, and the cut sits at the
/// highest contour point.
EllipsoidFit fit_ellipsoid_baseline(const slicer::AxisFrame& axis, const SeedPair& seeds);

/// Tessellates the cut ellipsoid with 64 longitudes and 32 latitude rings.
SurfaceMesh tessellate(const EllipsoidModel& e, int longitudes = 64, int latitudes = 32);

}  // namespace lvseg::mesh
