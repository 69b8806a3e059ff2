#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "lvseg/contours.hpp"
#include "lvseg/slicer.hpp"
#include "lvseg/volume.hpp"

namespace lvseg::phantom {

/// Closed-form LV cavity at one instant: an ellipsoid (a, b, c) in a local
/// frame whose z axis points apex -> base, truncated by the plane
/// z = kappa * c and optionally bent along a circular arc of radius bend_radius.
struct Shape {
  double a = 24.0, b = 24.0, c = 40.0;
  double kappa = 0.05;
  double wall = 7.0;         ///< wall thickness, mm
  double bend_radius = 0.0;  ///< 0 = straight
  Vec3 center = Vec3::Zero();
  slicer::Mat3 frame = slicer::Mat3::Identity();  ///< columns: local x, y, z in world coordinates

  double cut_z() const { return kappa * c; }
  /// Straight-space coordinates of a world point.
  Vec3 to_straight(const Vec3& world) const;
  /// World point of straight-space coordinates.
  Vec3 to_world(const Vec3& straight) const;

  bool inside_cavity(const Vec3& world) const;
  /// Approximate signed distances in mm (negative inside) to the cavity
  /// ellipsoid, the outer wall ellipsoid and the base plane.
  void signed_distances(const Vec3& world, double& cavity, double& outer, double& cut) const;

  Vec3 apex() const { return to_world({0.0, 0.0, -c}); }
  Vec3 base() const { return to_world({0.0, 0.0, cut_z()}); }

  /// Exact cavity volume in mL (the bend preserves volume).
  double volume_ml() const;
};

/// Volume of the ellipsoid x^2/a^2 + y^2/b^2 + z^2/c^2 <= 1 below z = z_cut, mm^3.
double truncated_ellipsoid_volume_mm3(double a, double b, double c, double z_cut);

struct PhantomSpec {
  std::string name = "custom";
  int frames = 20;
  int es_frame = 8;
  double a = 24.0, b = 24.0, c = 40.0;     ///< end-diastolic semi-axes, mm
  double es_scale_ab = 0.78;               ///< a, b multiplier at end-systole
  double es_scale_c = 0.90;                ///< c multiplier at end-systole
  double kappa = 0.05;
  double wall = 7.0;
  double bend_radius = 0.0;
  double wall_intensity = 0.85;
  double cavity_intensity = 0.08;
  double background_intensity = 0.35;
  double speckle_sigma = 0.25;
  std::array<int, 3> dims{80, 76, 100};
  std::array<double, 3> spacing{0.9, 0.95, 0.85};
  Vec3 tilt_deg = Vec3(12.0, -9.0, 20.0);  ///< x, y, z rotations of the LV frame
  std::uint64_t rng_seed = 20240917;
  bool frozen_speckle = false;             ///< one speckle realization for every frame

  void validate() const;
  Shape shape_at(int frame) const;
};

struct PhantomTruth {
  std::vector<SurfaceMesh> meshes;
  std::vector<double> volumes_ml;
  int ed_index = 0;
  int es_index = 0;
  double ef_percent = 0.0;
  StudyAnnotation annotation;
};

/// Renders one frame.
Volume3D render_frame(const PhantomSpec& spec, int frame);
Volume4D render(const PhantomSpec& spec);

/// Analytic truth surface: 128 meridians x 64 rings plus an apex vertex.
SurfaceMesh truth_mesh(const Shape& s, int meridians = 128, int rings = 64);

/// Endocardial trace of the cavity on a plane containing the axis, as a
/// K-point U-shaped contour (+radial hinge -> apex -> -radial hinge).
Contour3D seed_contour(const Shape& s, const slicer::SlicePlane& plane, int K = kContourPoints);

/// Seeds on the 0 and 90 degree planes of `axis` for the shape at `frame`.
SeedPair seeds_for(const PhantomSpec& spec, int frame, const slicer::AxisFrame& axis);

/// Axis of the end-diastolic shape.
slicer::AxisFrame truth_axis(const PhantomSpec& spec);

PhantomTruth make_truth(const PhantomSpec& spec);

/// static, beating, bent, lowsnr.
std::vector<PhantomSpec> default_suite();
/// Throws ValidationError (phantom.unknown) for names outside the suite.
PhantomSpec suite_member(const std::string& name);

nlohmann::json spec_to_json(const PhantomSpec& spec);
/// Missing keys keep their defaults; the result is validated.
PhantomSpec spec_from_json(const nlohmann::json& j);

/// Writes volume.json/.raw, annotation.json and truth/ into dir.
void write_study(const PhantomSpec& spec, const std::string& dir);

}  // namespace lvseg::phantom
