#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lvseg/image.hpp"

namespace lvseg {

/// One 3D frame. Voxel (i, j, k) sits at physical position
/// (i * sx, j * sy, k * sz) mm; intensities are normalized to [0, 1].
struct Volume3D {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> voxels;

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  float at(int i, int j, int k) const { return voxels[index(i, j, k)]; }
  float& at(int i, int j, int k) { return voxels[index(i, j, k)]; }
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  Vec3 voxel_position(int i, int j, int k) const {
    return {i * spacing[0], j * spacing[1], k * spacing[2]};
  }
  /// Physical size of the sampled box, (n - 1) * s per axis.
  Vec3 extent_mm() const {
    return {(dims[0] - 1) * spacing[0], (dims[1] - 1) * spacing[1], (dims[2] - 1) * spacing[2]};
  }
  bool same_geometry(const Volume3D& o) const { return dims == o.dims && spacing == o.spacing; }

  /// Trilinear interpolation at a physical position; 0 outside the box.
  double sample(const Vec3& mm) const;

  /// Throws ValidationError when a structural invariant is violated.
  void validate() const;
};

struct Volume4D {
  std::vector<Volume3D> frames;
  int ed_index = 0;
  int es_index = 1;

  int frame_count() const { return static_cast<int>(frames.size()); }
  void validate() const;
};

enum class Phase { ED, ES };

const char* phase_name(Phase p);

struct SeedPair {
  std::vector<Vec3> theta0;
  std::vector<Vec3> theta90;
};

/// User axis plus the four manually traced endocardial seed contours.
struct StudyAnnotation {
  Vec3 apex = Vec3::Zero();
  Vec3 base = Vec3::Zero();
  SeedPair ed;
  SeedPair es;

  const SeedPair& seeds(Phase p) const { return p == Phase::ED ? ed : es; }
  SeedPair& seeds(Phase p) { return p == Phase::ED ? ed : es; }
};

/// Grid of corresponded contour points: num_angles meridians spanning
/// 360 degrees, each with points_per_meridian vertices running base to apex.
struct MeridianLayout {
  int num_angles = 0;
  int points_per_meridian = 0;
};

struct SurfaceMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::optional<MeridianLayout> layout;

  bool empty() const { return vertices.empty() || triangles.empty(); }
  void validate() const;
};

struct FrameMetrics {
  int frame = 0;
  double mean_distance_mm = 0.0;
  double hausdorff_mm = 0.0;
  double dice = 0.0;
  double volume_ml = 0.0;
  double truth_volume_ml = 0.0;
};

struct ClinicalMetrics {
  double edv_ml = 0.0;
  double esv_ml = 0.0;
  double ef_percent = 0.0;
};

struct MetricsReport {
  std::vector<FrameMetrics> per_frame;
  ClinicalMetrics clinical;
  std::optional<ClinicalMetrics> truth_clinical;
  /// Free-form statistical summaries (Bland-Altman, correlation, ...).
  std::string stats_json;
};

}  // namespace lvseg
