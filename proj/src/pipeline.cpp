#include "lvseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lvseg/demons.hpp"
#include "lvseg/errors.hpp"
#include "lvseg/io.hpp"
#include "lvseg/meshkit.hpp"

namespace lvseg::pipeline {

using slicer::AxisFrame;
using slicer::SlicePlane;

Registrar moving_mesh_registrar(const reg::RegistrationConfig& cfg) {
  return [cfg](const Image2D& fixed, const Image2D& moving) { return reg::register_images(fixed, moving, cfg); };
}

Registrar demons_registrar(int iters, double sigma) {
  return [iters, sigma](const Image2D& fixed, const Image2D& moving) {
    return reg::register_demons(fixed, moving, iters, sigma);
  };
}

void Diagnostics::record(const reg::DeformationField2D& f) {
  ++registrations;
  if (!f.converged) ++not_converged;
  min_jacobian = std::min(min_jacobian, reg::min_interior_jacobian(f));
}

void Diagnostics::merge(const Diagnostics& o) {
  registrations += o.registrations;
  not_converged += o.not_converged;
  min_jacobian = std::min(min_jacobian, o.min_jacobian);
  clamped_points += o.clamped_points;
}

namespace {

slicer::SliceGeometry base_raster(const Volume3D& vol, const AxisFrame& axis, const Options& opt) {
  slicer::SliceGeometry g = slicer::slice_geometry_for(vol, axis);
  if (opt.slice_spacing_mm > 0.0) g.spacing = opt.slice_spacing_mm;
  return g;
}

Registrar registrar_for(const Options& opt) {
  return opt.registrar ? opt.registrar : moving_mesh_registrar(opt.reg);
}

Eigen::Vector2d plane_coords(const SlicePlane& plane, const Vec3& p) {
  const Vec3 d = p - plane.origin;
  return {d.dot(plane.axis_dir()), d.dot(plane.radial_dir())};
}

// Field from fixed to moving with the degeneracy policy applied.
reg::DeformationField2D run_registration(const Registrar& r, const Image2D& fixed, const Image2D& moving,
                                         const Options& opt, Diagnostics* diag, const std::string& where) {
  reg::DeformationField2D f = r(fixed, moving);
  if (diag) diag->record(f);
  if (opt.require_diffeomorphic && !(reg::min_interior_jacobian(f) > 0.0))
    throw RegistrationError("degenerate deformation at " + where);
  return f;
}

std::vector<Vec2> propagate(const std::vector<Vec2>& pts, const reg::DeformationField2D& f, int K,
                            Diagnostics* diag) {
  const auto w = reg::warp_points(pts, f);
  if (diag) diag->clamped_points += w.clamped;
  return resample_arclength(w.points, K);
}

std::string describe(const char* what, double angle, int frame = -1) {
  std::ostringstream os;
  os << what << " angle " << angle;
  if (frame >= 0) os << " frame " << frame;
  return os.str();
}

}  // namespace

void validate_theta_d(double theta_d) {
  slicer::angular_slice_count(theta_d);
  const double n = 90.0 / theta_d;
  if (std::abs(n - std::round(n)) > 1e-9)
    throw ValidationError("theta_d.divides_90", "theta_d must divide 90 so the seed planes are grid angles");
}

SlicePlane roi_plane(const AxisFrame& axis, double angle_deg, const slicer::SliceGeometry& raster,
                     const Eigen::AlignedBox2d& box) {
  const SlicePlane full = slicer::make_slice_plane(axis, angle_deg, raster);
  return slicer::crop(full, box.min().x(), box.max().x(), box.min().y(), box.max().y());
}

ContourSet3D segment_frame_3d(const Volume3D& vol, const AxisFrame& axis, const Contour3D& seed0,
                              const Contour3D& seed90, double theta_d, const Options& opt, Diagnostics* diag) {
  validate_theta_d(theta_d);
  const int K = kContourPoints;
  const Registrar reg_fn = registrar_for(opt);
  const slicer::SliceGeometry raster = base_raster(vol, axis, opt);

  const Contour3D s0 = static_cast<int>(seed0.size()) == K ? seed0 : resample_arclength(seed0, K);
  const Contour3D s90 = static_cast<int>(seed90.size()) == K ? seed90 : resample_arclength(seed90, K);

  // One ROI for every slice: the axial extent of both seeds, radially symmetric.
  const SlicePlane p0 = slicer::make_slice_plane(axis, 0.0, raster);
  const SlicePlane p90 = slicer::make_slice_plane(axis, 90.0, raster);
  double a_lo = 1e300, a_hi = -1e300, b_max = 0.0;
  for (const auto* set : {&s0, &s90})
    for (const auto& p : *set) {
      const auto ab = plane_coords(set == &s0 ? p0 : p90, p);
      a_lo = std::min(a_lo, ab.x());
      a_hi = std::max(a_hi, ab.x());
      b_max = std::max(b_max, std::abs(ab.y()));
    }
  const double m = opt.roi_margin_mm;
  const Eigen::AlignedBox2d box(Eigen::Vector2d(a_lo - m, -b_max - m), Eigen::Vector2d(a_hi + m, b_max + m));

  ContourSet3D out;
  out.contours[angle_key(0.0)] = s0;
  out.contours[angle_key(90.0)] = s90;

  auto store = [&](double signed_angle, const Contour3D& c) {
    if (signed_angle < 0.0) {
      out.contours[angle_key(signed_angle + 180.0)] = Contour3D(c.rbegin(), c.rend());
    } else {
      out.contours[angle_key(signed_angle)] = c;
    }
  };

  // Each seed covers the half-open arc of width 90 centered on it.
  struct Chain {
    double start;
    int direction;
    const Contour3D* seed;
  };
  const double per_arc = 45.0 / theta_d;
  const int pos_steps = static_cast<int>(std::floor(per_arc + 1e-9));
  // (-45, 45]: the positive direction may reach +45, the negative one stops short of -45.
  const int neg_steps = std::abs(per_arc - std::round(per_arc)) < 1e-9 ? pos_steps - 1 : pos_steps;
  for (const Chain& ch : {Chain{0.0, +1, &s0}, Chain{0.0, -1, &s0}, Chain{90.0, +1, &s90}, Chain{90.0, -1, &s90}}) {
    const int steps = ch.direction > 0 ? pos_steps : neg_steps;
    if (steps == 0) continue;
    SlicePlane prev_plane = roi_plane(axis, ch.start, raster, box);
    Image2D prev = slicer::extract_slice(vol, prev_plane).pixels;
    std::vector<Vec2> pts = slicer::project_contour(*ch.seed, prev_plane);
    for (int i = 1; i <= steps; ++i) {
      const double angle = ch.start + ch.direction * i * theta_d;
      const SlicePlane plane = roi_plane(axis, angle, raster, box);
      Image2D cur = slicer::extract_slice(vol, plane).pixels;
      const auto f = run_registration(reg_fn, prev, cur, opt, diag, describe("spatial", angle));
      pts = propagate(pts, f, K, diag);
      store(angle, slicer::lift_contour(pts, plane));
      prev = std::move(cur);
    }
  }
  return out;
}

double temporal_weight(int frame, int frames, int ed, int es) {
  auto fwd = [frames](int from, int to) { return ((to - from) % frames + frames) % frames; };
  const int sys_len = fwd(ed, es);
  const int d_ed = fwd(ed, frame);
  if (d_ed <= sys_len) return 1.0 - static_cast<double>(d_ed) / sys_len;
  const int dia_len = fwd(es, ed);
  return static_cast<double>(fwd(es, frame)) / dia_len;
}

std::vector<ContourSet3D> segment_cycle_4d(const Volume4D& vol, const AxisFrame& axis, const ContourSet3D& ed_set,
                                           const ContourSet3D& es_set, const Options& opt, Diagnostics* diag,
                                           TemporalCache* cache) {
  vol.validate();
  const int F = vol.frame_count();
  const int e = vol.ed_index, s = vol.es_index;
  if (ed_set.angles() != es_set.angles() || ed_set.points_per_contour() != es_set.points_per_contour())
    throw ValidationError("cycle.contour_mismatch", "ED and ES sets must share angles and point counts");
  const int K = ed_set.points_per_contour();

  std::vector<ContourSet3D> out(F);
  for (int t = 0; t < F; ++t) out[t].frame_index = t;
  out[e] = ed_set;
  out[e].frame_index = e;
  out[s] = es_set;
  out[s].frame_index = s;
  if (F == 2) return out;

  const Registrar reg_fn = registrar_for(opt);
  const slicer::SliceGeometry raster = base_raster(vol.frames[0], axis, opt);
  for (const auto& [angle, ed_c] : ed_set.contours) {
    const Contour3D& es_c = es_set.contours.at(angle);
    if (cache && cache->blended.count(angle)) {
      for (int t = 0; t < F; ++t)
        if (t != e && t != s) out[t].contours[angle] = cache->blended.at(angle)[t];
      continue;
    }
    const SlicePlane full = slicer::make_slice_plane(axis, angle, raster);
    Eigen::AlignedBox2d box;
    for (const auto* c : {&ed_c, &es_c})
      for (const auto& p : *c) box.extend(plane_coords(full, p));
    box.min().array() -= opt.roi_margin_mm;
    box.max().array() += opt.roi_margin_mm;
    const SlicePlane plane = roi_plane(axis, angle, raster, box);
    std::vector<Image2D> slices;
    slices.reserve(F);
    for (int t = 0; t < F; ++t) slices.push_back(slicer::extract_slice(vol.frames[t], plane, t).pixels);

    auto forward = [&](int t) {  // frame t -> t+1
      return run_registration(reg_fn, slices[t], slices[(t + 1) % F], opt, diag, describe("temporal", angle, t));
    };
    auto backward = [&](int t) {  // frame t+1 -> t
      return run_registration(reg_fn, slices[(t + 1) % F], slices[t], opt, diag,
                              describe("temporal", angle, (t + 1) % F));
    };

    std::vector<std::vector<Vec2>> cand_ed(F), cand_es(F);
    const auto ed2 = slicer::project_contour(ed_c, plane);
    const auto es2 = slicer::project_contour(es_c, plane);
    cand_ed[e] = ed2;
    cand_es[s] = es2;
    // systole: ED forward, ES backward
    std::vector<Vec2> cur = ed2;
    for (int t = e; t != s; t = (t + 1) % F) {
      cur = propagate(cur, forward(t), K, diag);
      cand_ed[(t + 1) % F] = cur;
    }
    cur = es2;
    for (int t = s; t != e; t = (t - 1 + F) % F) {
      const int tp = (t - 1 + F) % F;
      cur = propagate(cur, backward(tp), K, diag);
      if (tp != e) cand_es[tp] = cur;
    }
    // diastole: ES forward, ED backward (through the cycle wrap)
    cur = es2;
    for (int t = s; t != e; t = (t + 1) % F) {
      cur = propagate(cur, forward(t), K, diag);
      if ((t + 1) % F != e) cand_es[(t + 1) % F] = cur;
    }
    cur = ed2;
    for (int t = e; t != s; t = (t - 1 + F) % F) {
      const int tp = (t - 1 + F) % F;
      cur = propagate(cur, backward(tp), K, diag);
      if (tp != s) cand_ed[tp] = cur;
    }

    std::vector<Contour3D> blended(F), ed_only(F);
    for (int t = 0; t < F; ++t) {
      ed_only[t] = slicer::lift_contour(cand_ed[t], plane);
      if (t == e || t == s) continue;
      const double w = temporal_weight(t, F, e, s);
      std::vector<Vec2> mix(K);
      for (int k = 0; k < K; ++k) mix[k] = w * cand_ed[t][k] + (1.0 - w) * cand_es[t][k];
      blended[t] = slicer::lift_contour(mix, plane);
      out[t].contours[angle] = blended[t];
    }
    ed_only[e] = ed_c;
    if (cache) {
      cache->blended[angle] = std::move(blended);
      cache->ed_only[angle] = std::move(ed_only);
    }
  }
  return out;
}

StudyResult segment_study(const Volume4D& vol, const StudyAnnotation& ann, const Options& opt,
                          TemporalCache* cache) {
  vol.validate();
  io::validate_annotation(ann);
  validate_theta_d(opt.theta_d);
  validate_theta_d(opt.spatial_theta_d);
  const AxisFrame axis = slicer::build_axis_frame(ann.apex, ann.base);
  StudyResult r;
  r.ed_spatial = segment_frame_3d(vol.frames[vol.ed_index], axis, ann.ed.theta0, ann.ed.theta90,
                                  opt.spatial_theta_d, opt, &r.diagnostics);
  r.es_spatial = segment_frame_3d(vol.frames[vol.es_index], axis, ann.es.theta0, ann.es.theta90,
                                  opt.spatial_theta_d, opt, &r.diagnostics);
  r.ed_spatial.frame_index = vol.ed_index;
  r.es_spatial.frame_index = vol.es_index;
  r.ed_spatial_mesh = mesh::build_mesh(r.ed_spatial);
  r.es_spatial_mesh = mesh::build_mesh(r.es_spatial);
  ContourSet3D ed_sub = mesh::extract_subset(r.ed_spatial_mesh, opt.theta_d);
  ContourSet3D es_sub = mesh::extract_subset(r.es_spatial_mesh, opt.theta_d);
  ed_sub.frame_index = vol.ed_index;
  es_sub.frame_index = vol.es_index;
  r.frames = segment_cycle_4d(vol, axis, ed_sub, es_sub, opt, &r.diagnostics, cache);
  for (const auto& set : r.frames) {
    r.meshes.push_back(mesh::build_mesh(set));
    r.volumes_ml.push_back(mesh::mesh_volume(r.meshes.back()));
  }
  return r;
}

AxisFrame perturb_axis(const AxisFrame& axis, const std::string& rotation, double angle_rad) {
  if (rotation.size() != 2 || (rotation[0] != '+' && rotation[0] != '-'))
    throw ValidationError("perturb.rotation", "rotation must be one of +x, -x, +y, -y, +z, -z");
  Vec3 dir;
  switch (rotation[1]) {
    case 'x': dir = Vec3::UnitX(); break;
    case 'y': dir = Vec3::UnitY(); break;
    case 'z': dir = Vec3::UnitZ(); break;
    default: throw ValidationError("perturb.rotation", "rotation must be one of +x, -x, +y, -y, +z, -z");
  }
  if (rotation[0] == '-') dir = -dir;
  const Vec3 apex = axis.base + slicer::axis_angle(dir, angle_rad) * (axis.apex - axis.base);
  return slicer::build_axis_frame(apex, axis.base);
}

StudyAnnotation perturb_contours(const StudyAnnotation& ann, double delta) {
  if (std::abs(delta) > 5.0) throw ValidationError("perturb.delta", "|delta| must be at most 5 mm");
  StudyAnnotation out = ann;
  auto apply = [delta](std::vector<Vec3>& c) {
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : c) centroid += p;
    centroid /= static_cast<double>(c.size());
    for (auto& p : c) {
      const Vec3 d = p - centroid;
      const double r = d.norm();
      if (r + delta < 2.0) throw ValidationError("perturb.collapse", "erosion collapses the contour below 2 mm");
      p = centroid + d * ((r + delta) / r);
    }
  };
  for (Phase ph : {Phase::ED, Phase::ES}) {
    apply(out.seeds(ph).theta0);
    apply(out.seeds(ph).theta90);
  }
  return out;
}

}  // namespace lvseg::pipeline
