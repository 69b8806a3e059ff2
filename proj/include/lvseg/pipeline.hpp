#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lvseg/contours.hpp"
#include "lvseg/field.hpp"
#include "lvseg/registration.hpp"
#include "lvseg/slicer.hpp"
#include "lvseg/volume.hpp"

namespace lvseg::pipeline {

/// Registers fixed onto moving; the returned field maps fixed-grid positions
/// to moving-grid positions.
using Registrar = std::function<reg::DeformationField2D(const Image2D& fixed, const Image2D& moving)>;

Registrar moving_mesh_registrar(const reg::RegistrationConfig& cfg);
Registrar demons_registrar(int iters = 50, double sigma = 5.0);

/// Running summary of every field produced during a segmentation.
struct Diagnostics {
  int registrations = 0;
  int not_converged = 0;
  double min_jacobian = 1e300;
  int clamped_points = 0;

  void record(const reg::DeformationField2D& f);
  void merge(const Diagnostics& o);
};

struct Options {
  double theta_d = 5.0;          ///< spacing of the temporally propagated subset
  double spatial_theta_d = 1.0;  ///< spacing of the ED/ES spatial segmentation
  double roi_margin_mm = 10.0;   ///< margin around the contours for registration slices
  double slice_spacing_mm = 0.0; ///< in-plane pixel size; 0 = smallest voxel spacing
  reg::RegistrationConfig reg;
  Registrar registrar;           ///< defaults to the moving-mesh engine with `reg`
  /// Fail on any field whose interior Jacobian is not positive (off for baselines).
  bool require_diffeomorphic = true;
};

/// Throws ValidationError unless theta_d divides 90 (and hence 180).
void validate_theta_d(double theta_d);

/// Planes through the axis at `angle_deg`, cropped to an (a, b) box in mm.
slicer::SlicePlane roi_plane(const slicer::AxisFrame& axis, double angle_deg, const slicer::SliceGeometry& raster,
                             const Eigen::AlignedBox2d& box_ab);

/// Spatial segmentation of one frame from the two seed contours.
ContourSet3D segment_frame_3d(const Volume3D& vol, const slicer::AxisFrame& axis, const Contour3D& seed0,
                              const Contour3D& seed90, double theta_d, const Options& opt,
                              Diagnostics* diag = nullptr);

/// Per-angle temporal results, reusable across subsets that share angles.
struct TemporalCache {
  std::map<double, std::vector<Contour3D>> blended;   ///< per frame
  std::map<double, std::vector<Contour3D>> ed_only;   ///< ED-anchored propagation per frame
};

/// Temporal propagation of the ED and ES contour sets around the cycle with
/// point-wise blending. Anchor frames return the inputs unchanged.
std::vector<ContourSet3D> segment_cycle_4d(const Volume4D& vol, const slicer::AxisFrame& axis,
                                           const ContourSet3D& ed_set, const ContourSet3D& es_set,
                                           const Options& opt, Diagnostics* diag = nullptr,
                                           TemporalCache* cache = nullptr);

/// Blend weight of the ED candidate at `frame`: 1 at ED, 0 at ES, linear in
/// frame distance along each cycle segment.
double temporal_weight(int frame, int frames, int ed, int es);

struct StudyResult {
  ContourSet3D ed_spatial;
  ContourSet3D es_spatial;
  SurfaceMesh ed_spatial_mesh;
  SurfaceMesh es_spatial_mesh;
  std::vector<ContourSet3D> frames;
  std::vector<SurfaceMesh> meshes;
  std::vector<double> volumes_ml;
  Diagnostics diagnostics;
};

/// Full 4D segmentation: spatial ED/ES, subset extraction, temporal propagation, meshing.
StudyResult segment_study(const Volume4D& vol, const StudyAnnotation& ann, const Options& opt,
                          TemporalCache* cache = nullptr);

/// Rotates the apex about the base by an elemental rotation: "+x", "-x", "+y", "-y", "+z", "-z".
slicer::AxisFrame perturb_axis(const slicer::AxisFrame& axis, const std::string& rotation, double angle_rad);

/// Moves every contour point by delta mm along the direction from its
/// contour centroid.
StudyAnnotation perturb_contours(const StudyAnnotation& ann, double delta_mm);

}  // namespace lvseg::pipeline
