#include "lvseg/meshkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "lvseg/errors.hpp"

namespace lvseg::mesh {

namespace {

void flip_all(SurfaceMesh& m) {
  for (auto& t : m.triangles) std::swap(t[1], t[2]);
}

void orient_outward(SurfaceMesh& m) {
  if (signed_volume_mm3(capped(m)) < 0.0) flip_all(m);
}

}  // namespace

SurfaceMesh build_mesh(const ContourSet3D& set) {
  const int n = static_cast<int>(set.contours.size());
  if (n < 2) throw ValidationError("mesh.angles", "need at least two contours");
  const int K = set.points_per_contour();
  if (K < 4 || K % 2 != 0) throw ValidationError("mesh.contour_points", "contours need an even point count >= 4");
  for (const auto& [angle, c] : set.contours)
    if (static_cast<int>(c.size()) != K) throw ValidationError("mesh.contour_points", "contours differ in length");

  const int half = K / 2;
  const int meridians = 2 * n;
  SurfaceMesh m;
  m.vertices.reserve(static_cast<std::size_t>(meridians) * half + 1);
  for (const auto& [angle, c] : set.contours)
    for (int r = 0; r < half; ++r) m.vertices.push_back(c[r]);
  for (const auto& [angle, c] : set.contours)
    for (int r = 0; r < half; ++r) m.vertices.push_back(c[K - 1 - r]);

  Vec3 apex = Vec3::Zero();
  for (const auto& [angle, c] : set.contours) apex += 0.5 * (c[half - 1] + c[half]);
  apex /= n;
  const int apex_id = static_cast<int>(m.vertices.size());
  m.vertices.push_back(apex);

  auto vid = [&](int mer, int r) {
    const int id = (mer % meridians) * half + r;
    return (m.vertices[id] - apex).norm() < kApexMergeMm ? apex_id : id;
  };
  auto add = [&](int a, int b, int c) {
    if (a != b && b != c && a != c) m.triangles.push_back({a, b, c});
  };
  for (int mer = 0; mer < meridians; ++mer) {
    for (int r = 0; r + 1 < half; ++r) {
      add(vid(mer, r), vid(mer + 1, r), vid(mer + 1, r + 1));
      add(vid(mer, r), vid(mer + 1, r + 1), vid(mer, r + 1));
    }
    add(vid(mer, half - 1), vid(mer + 1, half - 1), apex_id);
  }
  m.layout = MeridianLayout{meridians, half};
  orient_outward(m);
  return m;
}

std::vector<int> boundary_loop(const SurfaceMesh& m) {
  std::map<std::pair<int, int>, int> undirected;
  for (const auto& t : m.triangles)
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      ++undirected[{std::min(a, b), std::max(a, b)}];
    }
  std::map<int, int> next;
  std::size_t count = 0;
  for (const auto& t : m.triangles)
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      if (undirected[{std::min(a, b), std::max(a, b)}] != 1) continue;
      if (!next.emplace(a, b).second) throw ValidationError("mesh.cap", "boundary is not a simple loop");
      ++count;
    }
  std::vector<int> loop;
  if (count == 0) return loop;
  const int start = next.begin()->first;
  int v = start;
  do {
    loop.push_back(v);
    auto it = next.find(v);
    if (it == next.end()) throw ValidationError("mesh.cap", "boundary loop is open");
    v = it->second;
    if (loop.size() > count) throw ValidationError("mesh.cap", "boundary loop does not close");
  } while (v != start);
  if (loop.size() != count) throw ValidationError("mesh.cap", "boundary has more than one loop");
  return loop;
}

SurfaceMesh capped(const SurfaceMesh& m) {
  const auto loop = boundary_loop(m);
  if (loop.empty()) return m;
  SurfaceMesh out = m;
  Vec3 c = Vec3::Zero();
  for (int v : loop) c += m.vertices[v];
  c /= static_cast<double>(loop.size());
  const int cid = static_cast<int>(out.vertices.size());
  out.vertices.push_back(c);
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const int a = loop[i], b = loop[(i + 1) % loop.size()];
    out.triangles.push_back({b, a, cid});
  }
  return out;
}

double signed_volume_mm3(const SurfaceMesh& m) {
  double v = 0.0;
  for (const auto& t : m.triangles)
    v += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]]));
  return v / 6.0;
}

double mesh_volume(const SurfaceMesh& m) {
  if (m.empty()) throw ValidationError("mesh.empty", "mesh has no triangles");
  return std::abs(signed_volume_mm3(capped(m))) / 1000.0;
}

ContourSet3D extract_subset(const SurfaceMesh& m, double theta_d) {
  if (!m.layout) throw ValidationError("mesh.layout", "mesh has no meridian layout");
  const int meridians = m.layout->num_angles;
  const int half = m.layout->points_per_meridian;
  const int n = meridians / 2;
  const double native = 180.0 / n;
  const double ratio = theta_d / native;
  const int step = static_cast<int>(std::lround(ratio));
  if (theta_d <= 0.0 || step < 1 || std::abs(ratio - step) > 1e-9 || n % step != 0)
    throw ValidationError("subset.spacing", "theta_d must be a multiple of the mesh spacing dividing 180");
  ContourSet3D out;
  for (int mer = 0; mer < n; mer += step) {
    Contour3D c;
    c.reserve(2 * half);
    for (int r = 0; r < half; ++r) c.push_back(m.vertices[mer * half + r]);
    for (int r = half - 1; r >= 0; --r) c.push_back(m.vertices[(mer + n) * half + r]);
    out.contours[angle_key(mer * native)] = std::move(c);
  }
  return out;
}

EllipsoidFit fit_ellipsoid_baseline(const slicer::AxisFrame& axis, const SeedPair& seeds) {
  const slicer::SliceGeometry raster;
  const Vec3 x = slicer::make_slice_plane(axis, 0.0, raster).radial_dir();
  const Vec3 z = -axis.v_hat;
  const Vec3 y = z.cross(x);

  auto half_width = [&](const std::vector<Vec3>& c, const Vec3& dir) {
    double lo = 0.0, hi = 0.0;
    for (const auto& p : c) {
      const double r = (p - axis.base).dot(dir);
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    return 0.5 * (hi - lo);
  };
  EllipsoidModel e;
  e.center = axis.base;
  e.orientation.col(0) = x;
  e.orientation.col(1) = y;
  e.orientation.col(2) = z;
  e.semi_axes = Vec3(half_width(seeds.theta0, x), half_width(seeds.theta90, y), axis.length());
  if (e.semi_axes.minCoeff() <= 0.0) throw ValidationError("baseline.degenerate", "seed contours have zero extent");
  double top = -e.semi_axes.z();
  for (const auto* c : {&seeds.theta0, &seeds.theta90})
    for (const auto& p : *c) top = std::max(top, (p - axis.base).dot(z));
  e.cut_z = std::min(top, e.semi_axes.z());
  return {e, tessellate(e)};
}

SurfaceMesh tessellate(const EllipsoidModel& e, int longitudes, int latitudes) {
  const double a = e.semi_axes.x(), b = e.semi_axes.y(), c = e.semi_axes.z();
  const double t_cut = std::asin(std::clamp(e.cut_z / c, -1.0, 1.0));
  const double t_apex = -std::numbers::pi / 2.0;
  SurfaceMesh m;
  m.vertices.push_back(e.to_world({0.0, 0.0, -c}));
  for (int j = 1; j <= latitudes; ++j) {
    const double t = t_apex + (t_cut - t_apex) * j / latitudes;
    for (int i = 0; i < longitudes; ++i) {
      const double p = 2.0 * std::numbers::pi * i / longitudes;
      m.vertices.push_back(e.to_world({a * std::cos(t) * std::cos(p), b * std::cos(t) * std::sin(p), c * std::sin(t)}));
    }
  }
  auto vid = [&](int j, int i) { return 1 + (j - 1) * longitudes + (i % longitudes); };
  for (int i = 0; i < longitudes; ++i) m.triangles.push_back({0, vid(1, i + 1), vid(1, i)});
  for (int j = 1; j < latitudes; ++j)
    for (int i = 0; i < longitudes; ++i) {
      m.triangles.push_back({vid(j, i), vid(j, i + 1), vid(j + 1, i + 1)});
      m.triangles.push_back({vid(j, i), vid(j + 1, i + 1), vid(j + 1, i)});
    }
  orient_outward(m);
  return m;
}

}  // namespace lvseg::mesh
