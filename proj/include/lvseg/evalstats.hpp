#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "lvseg/volume.hpp"

namespace lvseg::eval {

/// Bounding-volume hierarchy over the triangles of a mesh for closest-point queries.
class TriangleBVH {
 public:
  explicit TriangleBVH(const SurfaceMesh& m);
  ~TriangleBVH();
  TriangleBVH(TriangleBVH&&) noexcept;
  TriangleBVH& operator=(TriangleBVH&&) noexcept;

  double distance(const Vec3& p) const;
  Vec3 closest_point(const Vec3& p) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Closest point on triangle abc to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Area-weighted surface quadrature: each triangle is split into n*n
/// congruent sub-triangles sampled at their centroids.
struct SurfaceSamples {
  std::vector<Vec3> points;
  std::vector<double> weights;  ///< sums to the total area
};
SurfaceSamples sample_surface(const SurfaceMesh& m, int subdivisions = 4);

/// Mean over the surface of S of the distance to surface R (S -> R).
/// symmetric = true averages both directions.
double mean_absolute_distance(const SurfaceMesh& s, const SurfaceMesh& r, bool symmetric = false);

/// Max over the vertices and quadrature samples of S of the distance to surface R.
double directed_hausdorff(const SurfaceMesh& s, const SurfaceMesh& r, int subdivisions = 4);
/// Larger of the two directed distances.
double hausdorff(const SurfaceMesh& s, const SurfaceMesh& r, int subdivisions = 4);
double hausdorff(std::span<const Vec3> s, std::span<const Vec3> r);

struct VoxelMask {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> bits;

  std::size_t count() const;
};

/// Voxel centers inside the (capped) mesh, by parity of x-directed scanlines.
VoxelMask voxelize(const SurfaceMesh& m, const std::array<int, 3>& dims, const std::array<double, 3>& spacing);
VoxelMask voxelize(const SurfaceMesh& m, const Volume3D& grid);

struct DiceResult {
  double value = 0.0;
  bool both_empty = false;
};
DiceResult dice(const VoxelMask& s, const VoxelMask& r);
double dice(const SurfaceMesh& s, const SurfaceMesh& r, const Volume3D& grid);

double ejection_fraction(double edv_ml, double esv_ml);

struct BlandAltman {
  double bias = 0.0;
  double sd = 0.0;
  double loa_low = 0.0;
  double loa_high = 0.0;
};
BlandAltman bland_altman(std::span<const double> proposed, std::span<const double> reference);

struct KruskalWallisResult {
  double H = 0.0;
  double p_value = 1.0;
  int group_count = 0;
  int n_total = 0;
  bool full_tie = false;
  bool exact = false;  ///< p from the full permutation distribution
};

/// Average ranks with tie correction. p is the chi-squared upper tail with
/// (groups - 1) degrees of freedom, or the exact permutation p-value when
/// some group has fewer than 5 members and the enumeration is small.
KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

/// H statistic only.
double kruskal_wallis_h(const std::vector<std::vector<double>>& groups);

struct ReliabilityPoint {
  double threshold = 0.0;
  double fraction = 0.0;
};
/// Fraction of scores at or above each of `thresholds` equally spaced values on [0, 1].
std::vector<ReliabilityPoint> dice_reliability_curve(std::span<const double> scores, int thresholds);

double correlation(std::span<const double> xs, std::span<const double> ys);

double mean(std::span<const double> xs);
double stddev(std::span<const double> xs);

/// d_m (segmentation to truth), d_H, Dice on `grid`, and both volumes for one frame.
FrameMetrics compare_meshes(const SurfaceMesh& seg, const SurfaceMesh& truth, const Volume3D& grid, int frame = 0);

/// Clinical values plus summary statistics (means, Bland-Altman on volumes,
/// volume correlation, Dice reliability curve) for a cycle of frame metrics.
MetricsReport summarize(std::vector<FrameMetrics> per_frame, int ed_index, int es_index);

}  // namespace lvseg::eval
