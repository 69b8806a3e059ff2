#include "lvseg/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "lvseg/errors.hpp"
#include "lvseg/io.hpp"
#include "lvseg/meshkit.hpp"

namespace lvseg::experiments {

using pipeline::Options;
using slicer::AxisFrame;

std::vector<double> Group::values(const std::string& metric) const {
  std::vector<double> v;
  for (const auto& s : samples) {
    if (metric == "d_m") v.push_back(s.mean_distance_mm);
    else if (metric == "d_H") v.push_back(s.hausdorff_mm);
    else if (metric == "dice") v.push_back(s.dice);
    else if (metric == "volume") v.push_back(s.volume_ml);
    else throw ValidationError("experiment.metric", "unknown metric " + metric);
  }
  return v;
}

const Group& ExperimentResult::group(const std::string& label) const {
  for (const auto& g : groups)
    if (g.label == label) return g;
  throw ValidationError("experiment.group", "no group " + label);
}

const MetricTest& ExperimentResult::test(const std::string& metric) const {
  for (const auto& t : tests)
    if (t.metric == metric) return t;
  throw ValidationError("experiment.metric", "no test for " + metric);
}

namespace {

/// One sampled frame of a phantom: volume, truth, and the axis and seeds a
/// reader would place on it.
struct Subject {
  int frame = 0;
  Volume3D volume;
  SurfaceMesh truth;
  AxisFrame axis;
  SeedPair seeds;
};

std::vector<Subject> subjects(const phantom::PhantomSpec& spec, int stride) {
  std::vector<Subject> out;
  for (int f = 0; f < spec.frames; f += stride) {
    Subject s;
    s.frame = f;
    s.volume = phantom::render_frame(spec, f);
    const phantom::Shape shape = spec.shape_at(f);
    s.truth = phantom::truth_mesh(shape);
    s.axis = slicer::build_axis_frame(shape.apex(), shape.base());
    s.seeds = phantom::seeds_for(spec, f, s.axis);
    out.push_back(std::move(s));
  }
  return out;
}

void say(const Settings& s, const std::string& msg) {
  if (s.progress) s.progress(msg);
}

FrameMetrics spatial_sample(const Subject& sub, const AxisFrame& axis, const SeedPair& seeds, double theta_d,
                            const Options& opt, pipeline::Diagnostics* diag) {
  const ContourSet3D set = pipeline::segment_frame_3d(sub.volume, axis, seeds.theta0, seeds.theta90, theta_d, opt, diag);
  return eval::compare_meshes(mesh::build_mesh(set), sub.truth, sub.volume, sub.frame);
}

void add_tests(ExperimentResult& r, const std::vector<std::string>& metrics) {
  for (const auto& m : metrics) {
    std::vector<std::vector<double>> groups;
    for (const auto& g : r.groups) groups.push_back(g.values(m));
    r.tests.push_back({m, eval::kruskal_wallis(groups)});
  }
}

ExperimentResult start(const std::string& name, const phantom::PhantomSpec& spec) {
  ExperimentResult r;
  r.name = name;
  r.phantom = spec.name;
  return r;
}

Group named(const std::string& label) {
  Group g;
  g.label = label;
  return g;
}

int stride_or(const Settings& s, int fallback) { return s.frame_stride > 0 ? s.frame_stride : fallback; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

ExperimentResult angular_spacing(const Settings& s) {
  const auto spec = phantom::suite_member("beating");
  ExperimentResult r = start("angular-spacing", spec);
  const auto subs = subjects(spec, stride_or(s, 4));
  const double spacings[] = {1.0, 5.0, 10.0, 15.0};
  for (double td : spacings) {
    Group g = named(fmt("%g", td));
    for (const auto& sub : subs) {
      say(s, "theta_d " + g.label + " frame " + std::to_string(sub.frame));
      g.samples.push_back(spatial_sample(sub, sub.axis, sub.seeds, td, s.options, &r.diagnostics));
    }
    r.groups.push_back(std::move(g));
  }
  add_tests(r, {"d_m", "d_H", "dice"});
  double lo = 1.0, hi = 0.0;
  for (const auto& g : r.groups) {
    const auto d = g.values("dice");
    lo = std::min(lo, eval::mean(d));
    hi = std::max(hi, eval::mean(d));
  }
  r.extra["mean_dice_range"] = hi - lo;
  return r;
}

ExperimentResult axis_perturbation(const Settings& s) {
  const auto spec = phantom::suite_member("beating");
  ExperimentResult r = start("axis-perturbation", spec);
  const auto subs = subjects(spec, stride_or(s, 4));
  const double angle = std::numbers::pi / 32.0;
  const char* labels[] = {"none", "+x", "+y", "+z", "-x", "-y", "-z"};
  for (const char* label : labels) {
    Group g = named(label);
    for (const auto& sub : subs) {
      say(s, std::string("axis ") + label + " frame " + std::to_string(sub.frame));
      if (g.label == "none") {
        g.samples.push_back(spatial_sample(sub, sub.axis, sub.seeds, s.options.theta_d, s.options, &r.diagnostics));
        continue;
      }
      const AxisFrame axis = pipeline::perturb_axis(sub.axis, label, angle);
      const SeedPair seeds = phantom::seeds_for(spec, sub.frame, axis);
      g.samples.push_back(spatial_sample(sub, axis, seeds, s.options.theta_d, s.options, &r.diagnostics));
    }
    r.groups.push_back(std::move(g));
  }
  add_tests(r, {"d_m", "d_H", "dice", "volume"});
  double worst = 0.0;
  const auto base = r.groups.front().values("dice");
  for (const auto& g : r.groups) {
    const auto d = g.values("dice");
    for (std::size_t i = 0; i < d.size(); ++i) worst = std::max(worst, std::abs(d[i] - base[i]));
  }
  r.extra["max_dice_change"] = worst;
  return r;
}

ExperimentResult contour_perturbation(const Settings& s) {
  const auto spec = phantom::suite_member("beating");
  ExperimentResult r = start("contour-perturbation", spec);
  const auto subs = subjects(spec, stride_or(s, 4));
  for (double delta : {-1.0, 0.0, 1.0}) {
    Group g = named(fmt("%+g", delta));
    for (const auto& sub : subs) {
      say(s, "delta " + g.label + " frame " + std::to_string(sub.frame));
      StudyAnnotation ann;
      ann.apex = sub.axis.apex;
      ann.base = sub.axis.base;
      ann.ed = ann.es = sub.seeds;
      const SeedPair seeds = pipeline::perturb_contours(ann, delta).ed;
      g.samples.push_back(spatial_sample(sub, sub.axis, seeds, s.options.theta_d, s.options, &r.diagnostics));
    }
    r.groups.push_back(std::move(g));
  }
  add_tests(r, {"d_m", "d_H", "dice", "volume"});
  return r;
}

ExperimentResult ellipsoid_baseline(const Settings& s) {
  const auto bent = phantom::suite_member("bent");
  ExperimentResult r = start("ellipsoid-baseline", bent);
  const auto subs = subjects(bent, stride_or(s, 2));
  Group proposed = named("pipeline"), model = named("ellipsoid");
  for (const auto& sub : subs) {
    say(s, "bent frame " + std::to_string(sub.frame));
    proposed.samples.push_back(spatial_sample(sub, sub.axis, sub.seeds, s.options.theta_d, s.options, &r.diagnostics));
    const auto fit = mesh::fit_ellipsoid_baseline(sub.axis, sub.seeds);
    model.samples.push_back(eval::compare_meshes(fit.mesh, sub.truth, sub.volume, sub.frame));
  }
  r.groups = {std::move(proposed), std::move(model)};
  add_tests(r, {"d_m", "d_H", "dice", "volume"});

  // Volume agreement of the model where its shape assumption holds.
  const auto spheroid = phantom::suite_member("beating");
  nlohmann::json rows = nlohmann::json::array();
  double worst = 0.0;
  for (int f : {0, spheroid.es_frame}) {
    const phantom::Shape shape = spheroid.shape_at(f);
    const AxisFrame axis = slicer::build_axis_frame(shape.apex(), shape.base());
    const auto fit = mesh::fit_ellipsoid_baseline(axis, phantom::seeds_for(spheroid, f, axis));
    const double v = mesh::mesh_volume(fit.mesh), t = shape.volume_ml();
    const double rel = (v - t) / t;
    worst = std::max(worst, std::abs(rel));
    rows.push_back({{"frame", f}, {"model_ml", v}, {"truth_ml", t}, {"relative_error", rel}});
  }
  r.extra["spheroid_volume"] = rows;
  r.extra["spheroid_max_relative_error"] = worst;
  return r;
}

ExperimentResult method_comparison(const Settings& s, pipeline::StudyResult* proposed_out) {
  const auto spec = phantom::suite_member("beating");
  ExperimentResult r = start("method-comparison", spec);
  const Volume4D vol = phantom::render(spec);
  const phantom::PhantomTruth truth = phantom::make_truth(spec);

  struct Arm {
    std::string label;
    Options opt;
  };
  Options mm = s.options;
  Options dm = s.options;
  dm.registrar = pipeline::demons_registrar();
  dm.require_diffeomorphic = false;
  const Arm arms[] = {{"moving-mesh", mm}, {"demons", dm}};

  nlohmann::json table = nlohmann::json::array();
  nlohmann::json curves = nlohmann::json::object();
  for (const auto& arm : arms) {
    say(s, "study " + arm.label);
    const auto t0 = std::chrono::steady_clock::now();
    pipeline::StudyResult study = pipeline::segment_study(vol, truth.annotation, arm.opt);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Group g = named(arm.label);
    for (std::size_t f = 0; f < study.meshes.size(); ++f)
      g.samples.push_back(eval::compare_meshes(study.meshes[f], truth.meshes[f], vol.frames[f], static_cast<int>(f)));
    const auto dmv = g.values("d_m"), dhv = g.values("d_H"), dcv = g.values("dice");
    const auto vols = g.values("volume");
    table.push_back({{"method", arm.label},
                     {"d_m_mean", eval::mean(dmv)},
                     {"d_m_sd", eval::stddev(dmv)},
                     {"d_H_mean", eval::mean(dhv)},
                     {"d_H_sd", eval::stddev(dhv)},
                     {"dice_mean", eval::mean(dcv)},
                     {"dice_sd", eval::stddev(dcv)},
                     {"volume_correlation", eval::correlation(vols, truth.volumes_ml)},
                     {"seconds", seconds},
                     {"seconds_per_registration", seconds / std::max(1, study.diagnostics.registrations)}});
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : eval::dice_reliability_curve(dcv, 101)) curve.push_back({p.threshold, p.fraction});
    curves[arm.label] = curve;
    if (arm.label == "moving-mesh") {
      r.diagnostics = study.diagnostics;
      if (proposed_out) *proposed_out = std::move(study);
    }
    r.groups.push_back(std::move(g));
  }
  add_tests(r, {"d_m", "d_H", "dice", "volume"});
  r.extra["table"] = table;
  r.extra["reliability"] = curves;
  return r;
}

const std::vector<std::string>& names() {
  static const std::vector<std::string> n = {"angular-spacing", "axis-perturbation", "contour-perturbation",
                                             "ellipsoid-baseline", "method-comparison"};
  return n;
}

ExperimentResult run(const std::string& name, const Settings& s) {
  if (name == "angular-spacing") return angular_spacing(s);
  if (name == "axis-perturbation") return axis_perturbation(s);
  if (name == "contour-perturbation") return contour_perturbation(s);
  if (name == "ellipsoid-baseline") return ellipsoid_baseline(s);
  if (name == "method-comparison") return method_comparison(s);
  throw ValidationError("experiment.unknown", "unknown experiment '" + name + "'");
}

std::string format_table(const ExperimentResult& r) {
  std::string out = r.name + " (" + r.phantom + " phantom)\n\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s", "group");
  out += buf;
  for (const char* m : {"d_m (mm)", "d_H (mm)", "Dice", "volume (mL)"}) {
    std::snprintf(buf, sizeof buf, "%20s", m);
    out += buf;
  }
  out += "\n";
  for (const auto& g : r.groups) {
    std::snprintf(buf, sizeof buf, "%-10s", g.label.c_str());
    out += buf;
    for (const char* m : {"d_m", "d_H", "dice", "volume"}) {
      const auto v = g.values(m);
      std::snprintf(buf, sizeof buf, "%12.3f (%5.3f)", eval::mean(v), v.size() > 1 ? eval::stddev(v) : 0.0);
      out += buf;
    }
    out += "\n";
  }
  out += "\nKruskal-Wallis H\n";
  std::snprintf(buf, sizeof buf, "%-10s%16s%12s\n", "measure", "statistic", "p value");
  out += buf;
  for (const auto& t : r.tests) {
    const std::string p = t.kw.p_value < 0.001 ? "p<0.001" : fmt("%.3f", t.kw.p_value);
    std::snprintf(buf, sizeof buf, "%-10s%16.3f%12s\n", t.metric.c_str(), t.kw.H, p.c_str());
    out += buf;
  }
  if (r.extra.contains("table")) {
    out += "\nmethod            d_m (mm)          d_H (mm)          Dice            corr   s/reg\n";
    for (const auto& row : r.extra["table"]) {
      std::snprintf(buf, sizeof buf, "%-14s %6.3f (%5.3f)  %6.3f (%5.3f)  %6.3f (%5.3f)  %7.4f  %6.3f\n",
                    row["method"].get<std::string>().c_str(), row["d_m_mean"].get<double>(),
                    row["d_m_sd"].get<double>(), row["d_H_mean"].get<double>(), row["d_H_sd"].get<double>(),
                    row["dice_mean"].get<double>(), row["dice_sd"].get<double>(),
                    row["volume_correlation"].get<double>(), row["seconds_per_registration"].get<double>());
      out += buf;
    }
  }
  return out;
}

void write_result(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["name"] = r.name;
  j["phantom"] = r.phantom;
  for (const auto& g : r.groups) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : g.samples)
      rows.push_back({{"frame", s.frame},
                      {"d_m_mm", s.mean_distance_mm},
                      {"d_H_mm", s.hausdorff_mm},
                      {"dice", s.dice},
                      {"volume_ml", s.volume_ml},
                      {"truth_volume_ml", s.truth_volume_ml}});
    j["groups"].push_back({{"label", g.label}, {"samples", rows}});
  }
  for (const auto& t : r.tests)
    j["kruskal_wallis"].push_back({{"metric", t.metric},
                                   {"H", t.kw.H},
                                   {"p_value", t.kw.p_value},
                                   {"exact", t.kw.exact},
                                   {"full_tie", t.kw.full_tie}});
  j["extra"] = r.extra;
  j["diagnostics"] = {{"registrations", r.diagnostics.registrations},
                      {"not_converged", r.diagnostics.not_converged},
                      {"min_jacobian", r.diagnostics.min_jacobian}};
  io::write_text(dir / "result.json", j.dump(2) + "\n");

  std::string csv = "group,frame,d_m_mm,d_H_mm,dice,volume_ml,truth_volume_ml\n";
  char buf[256];
  for (const auto& g : r.groups)
    for (const auto& s : g.samples) {
      std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", g.label.c_str(), s.frame,
                    s.mean_distance_mm, s.hausdorff_mm, s.dice, s.volume_ml, s.truth_volume_ml);
      csv += buf;
    }
  io::write_text(dir / "samples.csv", csv);

  std::string kw = "metric,H,p_value\n";
  for (const auto& t : r.tests) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6g\n", t.metric.c_str(), t.kw.H, t.kw.p_value);
    kw += buf;
  }
  io::write_text(dir / "kruskal_wallis.csv", kw);
  io::write_text(dir / "table.txt", format_table(r));
}

}  // namespace lvseg::experiments
