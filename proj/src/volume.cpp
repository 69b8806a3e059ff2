#include "lvseg/volume.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "lvseg/errors.hpp"

namespace lvseg {

double Volume3D::sample(const Vec3& mm) const {
  double f[3];
  int i0[3];
  for (int a = 0; a < 3; ++a) {
    const double g = mm[a] / spacing[a];
    if (!(g >= 0.0) || g > dims[a] - 1) return 0.0;
    int i = static_cast<int>(g);
    if (i >= dims[a] - 1) i = dims[a] - 2;
    i0[a] = i;
    f[a] = g - i;
  }
  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(dims[0]);
  const std::size_t sz = sy * dims[1];
  const float* p = voxels.data() + index(i0[0], i0[1], i0[2]);
  const double c00 = p[0] * (1 - f[0]) + p[sx] * f[0];
  const double c10 = p[sy] * (1 - f[0]) + p[sy + sx] * f[0];
  const double c01 = p[sz] * (1 - f[0]) + p[sz + sx] * f[0];
  const double c11 = p[sz + sy] * (1 - f[0]) + p[sz + sy + sx] * f[0];
  const double c0 = c00 * (1 - f[1]) + c10 * f[1];
  const double c1 = c01 * (1 - f[1]) + c11 * f[1];
  return c0 * (1 - f[2]) + c1 * f[2];
}

void Volume3D::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 2) throw ValidationError("volume.dims", "every dimension must be >= 2");
    if (!(spacing[a] > 0.0)) throw ValidationError("volume.spacing", "spacing must be positive");
  }
  if (voxels.size() != voxel_count()) {
    std::ostringstream os;
    os << "expected " << voxel_count() << " voxels, got " << voxels.size();
    throw ValidationError("volume.payload_size", os.str());
  }
}

void Volume4D::validate() const {
  if (frame_count() < 2) throw ValidationError("volume4d.frame_count", "need at least 2 frames");
  for (const auto& f : frames) {
    f.validate();
    if (!f.same_geometry(frames.front()))
      throw ValidationError("volume4d.dimension_mismatch",
                            "all frames must share dimensions and spacing");
  }
  if (ed_index < 0 || ed_index >= frame_count() || es_index < 0 || es_index >= frame_count())
    throw ValidationError("volume4d.phase_index", "ED/ES index out of range");
  if (ed_index == es_index)
    throw ValidationError("volume4d.phase_index", "ED and ES must be different frames");
}

const char* phase_name(Phase p) { return p == Phase::ED ? "ED" : "ES"; }

void SurfaceMesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& t : triangles)
    for (int v : t)
      if (v < 0 || v >= n) throw ValidationError("mesh.index_range", "triangle index out of range");
  if (layout) {
    const long grid = static_cast<long>(layout->num_angles) * layout->points_per_meridian;
    if (grid > n) throw ValidationError("mesh.layout", "meridian grid larger than vertex list");
  }
}

}  // namespace lvseg
