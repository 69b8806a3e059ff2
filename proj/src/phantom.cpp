#include "lvseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "lvseg/errors.hpp"
#include "lvseg/io.hpp"
#include "lvseg/meshkit.hpp"

namespace lvseg::phantom {

namespace fs = std::filesystem;
using std::numbers::pi;

Vec3 Shape::to_straight(const Vec3& world) const {
  const Vec3 p = frame.transpose() * (world - center);
  if (bend_radius <= 0.0) return p;
  const double R = bend_radius;
  const double rho = std::hypot(R - p.x(), p.z());
  const double ang = std::atan2(p.z(), R - p.x());
  return {R - rho, p.y(), R * ang};
}

Vec3 Shape::to_world(const Vec3& s) const {
  Vec3 p = s;
  if (bend_radius > 0.0) {
    const double R = bend_radius;
    p = Vec3(R - (R - s.x()) * std::cos(s.z() / R), s.y(), (R - s.x()) * std::sin(s.z() / R));
  }
  return center + frame * p;
}

namespace {

// F / |grad F| for the ellipsoid level function F = sqrt(sum (x_i/s_i)^2).
double ellipsoid_distance(const Vec3& p, double a, double b, double c) {
  const double F = std::sqrt(p.x() * p.x() / (a * a) + p.y() * p.y() / (b * b) + p.z() * p.z() / (c * c));
  if (F < 1e-12) return -std::min({a, b, c});
  const Vec3 g(p.x() / (a * a * F), p.y() / (b * b * F), p.z() / (c * c * F));
  return (F - 1.0) / g.norm();
}

}  // namespace

bool Shape::inside_cavity(const Vec3& world) const {
  const Vec3 s = to_straight(world);
  if (s.z() > cut_z()) return false;
  return s.x() * s.x() / (a * a) + s.y() * s.y() / (b * b) + s.z() * s.z() / (c * c) <= 1.0;
}

void Shape::signed_distances(const Vec3& world, double& cavity, double& outer, double& cut) const {
  const Vec3 s = to_straight(world);
  cavity = ellipsoid_distance(s, a, b, c);
  outer = ellipsoid_distance(s, a + wall, b + wall, c + wall);
  cut = s.z() - cut_z();
}

double truncated_ellipsoid_volume_mm3(double a, double b, double c, double z_cut) {
  const double zc = std::clamp(z_cut, -c, c);
  return pi * a * b * ((zc + c) - (zc * zc * zc + c * c * c) / (3.0 * c * c));
}

double Shape::volume_ml() const { return truncated_ellipsoid_volume_mm3(a, b, c, cut_z()) / 1000.0; }

namespace {

slicer::Mat3 tilt_matrix(const Vec3& deg) {
  const Vec3 r = deg * pi / 180.0;
  return (Eigen::AngleAxisd(r.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(r.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(r.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

// 0 at ED (frame 0), 1 at ES, cosine ramps in between.
double contraction(const PhantomSpec& spec, int frame) {
  const double t = frame;
  if (t <= spec.es_frame) return 0.5 * (1.0 - std::cos(pi * t / spec.es_frame));
  return 0.5 * (1.0 + std::cos(pi * (t - spec.es_frame) / (spec.frames - spec.es_frame)));
}

}  // namespace

Shape PhantomSpec::shape_at(int frame) const {
  const double g = contraction(*this, frame);
  Shape s;
  s.a = a * (1.0 - (1.0 - es_scale_ab) * g);
  s.b = b * (1.0 - (1.0 - es_scale_ab) * g);
  s.c = c * (1.0 - (1.0 - es_scale_c) * g);
  s.kappa = kappa;
  s.wall = wall;
  s.bend_radius = bend_radius;
  s.frame = tilt_matrix(tilt_deg);
  // The ED axis midpoint sits at the volume center; the shape center stays fixed.
  const Vec3 box_center(0.5 * (dims[0] - 1) * spacing[0], 0.5 * (dims[1] - 1) * spacing[1],
                        0.5 * (dims[2] - 1) * spacing[2]);
  s.center = box_center + s.frame.col(2) * (0.5 * c * (1.0 - kappa));
  return s;
}

void PhantomSpec::validate() const {
  if (frames < 2) throw ValidationError("phantom.frames", "need at least two frames");
  if (es_frame <= 0 || es_frame >= frames) throw ValidationError("phantom.es_frame", "ES frame out of range");
  if (!(a > 0 && b > 0 && c > 0 && es_scale_ab > 0 && es_scale_c > 0))
    throw ValidationError("phantom.semi_axes", "semi-axes must be positive");
  if (es_scale_ab * es_scale_ab * es_scale_c > 1.0)
    throw ValidationError("phantom.ejection", "end-systolic volume must not exceed end-diastolic volume");
  if (!(kappa > -1.0 && kappa < 1.0)) throw ValidationError("phantom.kappa", "cut must lie inside the ellipsoid");
  if (!(wall_intensity > background_intensity && background_intensity > cavity_intensity))
    throw ValidationError("phantom.intensity", "need wall > background > cavity");
  const double max_spacing = *std::max_element(spacing.begin(), spacing.end());
  if (wall < 2.0 * max_spacing) throw ValidationError("phantom.wall", "wall thinner than two voxels");
  if (speckle_sigma < 0.0) throw ValidationError("phantom.speckle", "speckle sigma must be >= 0");
  if (bend_radius < 0.0 || (bend_radius > 0.0 && bend_radius < 2.0 * (std::max(a, b) + wall)))
    throw ValidationError("phantom.bend", "bend radius too small");
  for (int d = 0; d < 3; ++d)
    if (dims[d] < 8 || !(spacing[d] > 0.0)) throw ValidationError("phantom.grid", "invalid grid");
  // The outer wall must fit in the volume at end-diastole.
  const Shape s = shape_at(0);
  for (int k = 0; k <= 16; ++k)
    for (int m = 0; m < 16; ++m) {
      const double t = -pi / 2 + (std::asin(kappa) + pi / 2) * k / 16.0;
      const double p = 2.0 * pi * m / 16.0;
      const Vec3 q = s.to_world({(s.a + wall) * std::cos(t) * std::cos(p), (s.b + wall) * std::cos(t) * std::sin(p),
                                 (s.c + wall) * std::sin(t)});
      for (int d = 0; d < 3; ++d)
        if (q[d] < 0.0 || q[d] > (dims[d] - 1) * spacing[d])
          throw ValidationError("phantom.grid", "shape does not fit in the volume");
    }
}

Volume3D render_frame(const PhantomSpec& spec, int frame) {
  const Shape s = spec.shape_at(frame);
  Volume3D v;
  v.dims = spec.dims;
  v.spacing = spec.spacing;
  v.voxels.resize(static_cast<std::size_t>(spec.dims[0]) * spec.dims[1] * spec.dims[2]);
  std::seed_seq seq{static_cast<std::uint32_t>(spec.rng_seed), static_cast<std::uint32_t>(spec.rng_seed >> 32),
                    static_cast<std::uint32_t>(spec.frozen_speckle ? 0 : frame)};
  std::mt19937_64 rng(seq);
  const double ramp = *std::min_element(spec.spacing.begin(), spec.spacing.end());
  auto fraction_inside = [&](double d) { return std::clamp(0.5 - d / ramp, 0.0, 1.0); };
  const double rayleigh_scale = std::sqrt(2.0 / pi);  // unit mean
  std::size_t idx = 0;
  for (int k = 0; k < spec.dims[2]; ++k)
    for (int j = 0; j < spec.dims[1]; ++j)
      for (int i = 0; i < spec.dims[0]; ++i, ++idx) {
        const Vec3 p(i * spec.spacing[0], j * spec.spacing[1], k * spec.spacing[2]);
        double dc, dout, dcut;
        s.signed_distances(p, dc, dout, dcut);
        const double below = fraction_inside(dcut);
        const double in_cav = fraction_inside(dc) * below;
        const double in_out = std::max(fraction_inside(dout) * below, in_cav);
        double value = spec.cavity_intensity * in_cav + spec.wall_intensity * (in_out - in_cav) +
                       spec.background_intensity * (1.0 - in_out);
        const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
        if (spec.speckle_sigma > 0.0) {
          const double n = rayleigh_scale * std::sqrt(-2.0 * std::log(u));
          value *= 1.0 + spec.speckle_sigma * (n - 1.0);
        }
        v.voxels[idx] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
  return v;
}

Volume4D render(const PhantomSpec& spec) {
  spec.validate();
  Volume4D vol;
  for (int f = 0; f < spec.frames; ++f) vol.frames.push_back(render_frame(spec, f));
  const PhantomTruth t = make_truth(spec);
  vol.ed_index = t.ed_index;
  vol.es_index = t.es_index;
  return vol;
}

SurfaceMesh truth_mesh(const Shape& s, int meridians, int rings) {
  SurfaceMesh m;
  m.vertices.push_back(s.to_world({0.0, 0.0, -s.c}));
  const double t_cut = std::asin(std::clamp(s.kappa, -1.0, 1.0));
  for (int r = 1; r <= rings; ++r) {
    const double t = -pi / 2 + (t_cut + pi / 2) * r / rings;
    for (int i = 0; i < meridians; ++i) {
      const double p = 2.0 * pi * i / meridians;
      m.vertices.push_back(
          s.to_world({s.a * std::cos(t) * std::cos(p), s.b * std::cos(t) * std::sin(p), s.c * std::sin(t)}));
    }
  }
  auto vid = [&](int r, int i) { return 1 + (r - 1) * meridians + (i % meridians); };
  for (int i = 0; i < meridians; ++i) m.triangles.push_back({0, vid(1, i + 1), vid(1, i)});
  for (int r = 1; r < rings; ++r)
    for (int i = 0; i < meridians; ++i) {
      m.triangles.push_back({vid(r, i), vid(r, i + 1), vid(r + 1, i + 1)});
      m.triangles.push_back({vid(r, i), vid(r + 1, i + 1), vid(r + 1, i)});
    }
  // A proper rotation with positive bend Jacobian keeps this winding outward.
  if (s.frame.determinant() < 0.0)
    for (auto& t : m.triangles) std::swap(t[1], t[2]);
  return m;
}

namespace {

struct RayHit {
  double radius;
  bool cap;
};

RayHit cast(const Shape& s, const Vec3& q, const Vec3& dir) {
  double lo = 0.0, hi = 0.0;
  const double step = 0.25;
  while (true) {
    hi = lo + step;
    if (!s.inside_cavity(q + dir * hi)) break;
    lo = hi;
    if (lo > 500.0) throw ValidationError("phantom.seed", "ray never leaves the cavity");
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (s.inside_cavity(q + dir * mid) ? lo : hi) = mid;
  }
  const Vec3 beyond = q + dir * (hi + 1e-7);
  const bool cap = s.to_straight(beyond).z() > s.cut_z();
  return {0.5 * (lo + hi), cap};
}

// Largest |psi| on [0, pi] (signed by `side`) whose ray still exits through the wall.
double hinge_angle(const Shape& s, const Vec3& q, const Vec3& ax, const Vec3& rad, double side) {
  auto dir = [&](double psi) { return Vec3(ax * std::cos(psi) + rad * (side * std::sin(psi))); };
  double wall = 0.0, cap = pi;
  if (cast(s, q, dir(0.0)).cap || !cast(s, q, dir(pi)).cap)
    throw ValidationError("phantom.seed", "axis does not run from the cap to the apex wall");
  for (int k = 1; k <= 180; ++k) {
    const double psi = pi * k / 180.0;
    if (cast(s, q, dir(psi)).cap) {
      cap = psi;
      break;
    }
    wall = psi;
  }
  for (int it = 0; it < 50; ++it) {
    const double mid = 0.5 * (wall + cap);
    (cast(s, q, dir(mid)).cap ? cap : wall) = mid;
  }
  return side * wall;
}

}  // namespace

Contour3D seed_contour(const Shape& s, const slicer::SlicePlane& plane, int K) {
  const Vec3 q = plane.origin;
  const Vec3 ax = plane.axis_dir(), rad = plane.radial_dir();
  const double hp = hinge_angle(s, q, ax, rad, +1.0);
  const double hm = hinge_angle(s, q, ax, rad, -1.0);
  constexpr int kRays = 2048;
  std::vector<Vec3> poly;
  poly.reserve(kRays + 1);
  for (int i = 0; i <= kRays; ++i) {
    const double psi = hp + (hm - hp) * i / kRays;
    const Vec3 d = ax * std::cos(psi) + rad * std::sin(psi);
    poly.push_back(q + d * cast(s, q, d).radius);
  }
  return resample_arclength(poly, K);
}

slicer::AxisFrame truth_axis(const PhantomSpec& spec) {
  const Shape s = spec.shape_at(0);
  return slicer::build_axis_frame(s.apex(), s.base());
}

SeedPair seeds_for(const PhantomSpec& spec, int frame, const slicer::AxisFrame& axis) {
  const Shape s = spec.shape_at(frame);
  const slicer::SliceGeometry raster;
  SeedPair p;
  p.theta0 = seed_contour(s, slicer::make_slice_plane(axis, 0.0, raster));
  p.theta90 = seed_contour(s, slicer::make_slice_plane(axis, 90.0, raster));
  return p;
}

PhantomTruth make_truth(const PhantomSpec& spec) {
  spec.validate();
  PhantomTruth t;
  for (int f = 0; f < spec.frames; ++f) {
    const Shape s = spec.shape_at(f);
    t.meshes.push_back(truth_mesh(s));
    t.volumes_ml.push_back(s.volume_ml());
  }
  t.ed_index = 0;
  t.es_index = spec.es_frame;
  for (int f = 1; f < spec.frames; ++f)
    if (t.volumes_ml[f] < t.volumes_ml[t.es_index]) t.es_index = f;
  const double edv = t.volumes_ml[t.ed_index], esv = t.volumes_ml[t.es_index];
  t.ef_percent = (edv - esv) / edv * 100.0;
  const auto axis = truth_axis(spec);
  t.annotation.apex = axis.apex;
  t.annotation.base = axis.base;
  t.annotation.ed = seeds_for(spec, t.ed_index, axis);
  t.annotation.es = seeds_for(spec, t.es_index, axis);
  return t;
}

std::vector<PhantomSpec> default_suite() {
  std::vector<PhantomSpec> suite;
  PhantomSpec st;
  st.name = "static";
  st.frames = 10;
  st.es_frame = 4;
  st.es_scale_ab = 1.0;
  st.es_scale_c = 1.0;
  st.rng_seed = 11;
  st.frozen_speckle = true;
  suite.push_back(st);

  PhantomSpec beat;
  beat.name = "beating";
  beat.rng_seed = 22;
  suite.push_back(beat);

  PhantomSpec bent;
  bent.name = "bent";
  bent.a = 25.0;
  bent.b = 20.0;
  bent.c = 38.0;
  bent.kappa = 0.3;
  bent.bend_radius = 70.0;
  bent.dims = {84, 80, 100};
  bent.rng_seed = 33;
  suite.push_back(bent);

  PhantomSpec low;
  low.name = "lowsnr";
  low.speckle_sigma = 0.8;
  low.rng_seed = 44;
  suite.push_back(low);
  return suite;
}

PhantomSpec suite_member(const std::string& name) {
  for (const auto& s : default_suite())
    if (s.name == name) return s;
  throw ValidationError("phantom.unknown", "unknown phantom '" + name + "'");
}

nlohmann::json spec_to_json(const PhantomSpec& s) {
  return {{"name", s.name},
          {"frames", s.frames},
          {"es_frame", s.es_frame},
          {"a", s.a},
          {"b", s.b},
          {"c", s.c},
          {"es_scale_ab", s.es_scale_ab},
          {"es_scale_c", s.es_scale_c},
          {"kappa", s.kappa},
          {"wall", s.wall},
          {"bend_radius", s.bend_radius},
          {"wall_intensity", s.wall_intensity},
          {"cavity_intensity", s.cavity_intensity},
          {"background_intensity", s.background_intensity},
          {"speckle_sigma", s.speckle_sigma},
          {"dims", s.dims},
          {"spacing", s.spacing},
          {"tilt_deg", {s.tilt_deg.x(), s.tilt_deg.y(), s.tilt_deg.z()}},
          {"rng_seed", s.rng_seed},
          {"frozen_speckle", s.frozen_speckle}};
}

PhantomSpec spec_from_json(const nlohmann::json& j) {
  PhantomSpec s;
  try {
    s.name = j.value("name", s.name);
    s.frames = j.value("frames", s.frames);
    s.es_frame = j.value("es_frame", s.es_frame);
    s.a = j.value("a", s.a);
    s.b = j.value("b", s.b);
    s.c = j.value("c", s.c);
    s.es_scale_ab = j.value("es_scale_ab", s.es_scale_ab);
    s.es_scale_c = j.value("es_scale_c", s.es_scale_c);
    s.kappa = j.value("kappa", s.kappa);
    s.wall = j.value("wall", s.wall);
    s.bend_radius = j.value("bend_radius", s.bend_radius);
    s.wall_intensity = j.value("wall_intensity", s.wall_intensity);
    s.cavity_intensity = j.value("cavity_intensity", s.cavity_intensity);
    s.background_intensity = j.value("background_intensity", s.background_intensity);
    s.speckle_sigma = j.value("speckle_sigma", s.speckle_sigma);
    s.dims = j.value("dims", s.dims);
    s.spacing = j.value("spacing", s.spacing);
    if (j.contains("tilt_deg")) {
      const auto t = j.at("tilt_deg").get<std::array<double, 3>>();
      s.tilt_deg = Vec3(t[0], t[1], t[2]);
    }
    s.rng_seed = j.value("rng_seed", s.rng_seed);
    s.frozen_speckle = j.value("frozen_speckle", s.frozen_speckle);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("phantom.json", e.what());
  }
  s.validate();
  return s;
}

void write_study(const PhantomSpec& spec, const std::string& dir_str) {
  const fs::path dir(dir_str);
  fs::create_directories(dir / "truth");
  const Volume4D vol = render(spec);
  io::write_volume4d(vol, dir / "volume.json", io::VoxelType::U8);
  const PhantomTruth t = make_truth(spec);
  io::write_annotation(t.annotation, dir / "annotation.json");
  nlohmann::json tj;
  tj["name"] = spec.name;
  tj["ed_index"] = t.ed_index;
  tj["es_index"] = t.es_index;
  tj["ef_percent"] = t.ef_percent;
  tj["volumes_ml"] = t.volumes_ml;
  tj["grid"] = {{"dims", spec.dims}, {"spacing", spec.spacing}};
  tj["spec"] = spec_to_json(spec);
  for (std::size_t f = 0; f < t.meshes.size(); ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.obj", f);
    io::write_mesh(t.meshes[f], dir / "truth" / name);
  }
  io::write_text(dir / "truth" / "truth.json", tj.dump(2) + "\n");
}

}  // namespace lvseg::phantom
