#include <algorithm>
#include <cstdio>
#include <iostream>

#include "app.hpp"
#include "lvseg/evalstats.hpp"
#include "lvseg/experiments.hpp"
#include "lvseg/io.hpp"
#include "lvseg/meshkit.hpp"
#include "lvseg/phantom.hpp"

namespace lvseg::app {

namespace {

std::string frame_name(std::size_t f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu.obj", f);
  return buf;
}

/// frame_*.obj files of a directory in frame order.
std::vector<fs::path> mesh_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("file.missing", "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (e.is_regular_file() && n.starts_with("frame_") && n.ends_with(".obj")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<SurfaceMesh> read_meshes(const std::vector<fs::path>& files) {
  std::vector<SurfaceMesh> out;
  for (const auto& f : files) out.push_back(io::read_mesh(f));
  return out;
}

/// Voxel grid for Dice: the study grid recorded in truth.json, otherwise a
/// 0.5 mm grid over both mesh sets.
Volume3D dice_grid(const nlohmann::json& truth_meta, const std::vector<SurfaceMesh>& a,
                   const std::vector<SurfaceMesh>& b) {
  Volume3D g;
  if (truth_meta.contains("grid")) {
    g.dims = truth_meta["grid"]["dims"].get<std::array<int, 3>>();
    g.spacing = truth_meta["grid"]["spacing"].get<std::array<double, 3>>();
    return g;
  }
  Vec3 hi = Vec3::Constant(-1e300);
  for (const auto* set : {&a, &b})
    for (const auto& m : *set)
      for (const auto& v : m.vertices) hi = hi.cwiseMax(v);
  for (int d = 0; d < 3; ++d) {
    g.spacing[d] = 0.5;
    g.dims[d] = static_cast<int>(std::ceil((hi[d] + 1.0) / 0.5)) + 1;
  }
  return g;
}

MetricsReport evaluate_meshes(const std::vector<SurfaceMesh>& pred, const std::vector<SurfaceMesh>& truth,
                              const Volume3D& grid, int ed, int es) {
  if (pred.size() != truth.size())
    throw ValidationError("evaluate.frame_mismatch", std::to_string(pred.size()) + " predicted frames vs " +
                                                         std::to_string(truth.size()) + " truth frames");
  std::vector<FrameMetrics> per_frame;
  for (std::size_t f = 0; f < pred.size(); ++f)
    per_frame.push_back(eval::compare_meshes(pred[f], truth[f], grid, static_cast<int>(f)));
  return eval::summarize(std::move(per_frame), ed, es);
}

nlohmann::json read_truth_meta(const fs::path& truth_dir) {
  const fs::path p = truth_dir / "truth.json";
  return fs::exists(p) ? nlohmann::json::parse(io::read_text(p)) : nlohmann::json::object();
}

void write_report_files(const MetricsReport& report, const fs::path& out) {
  io::write_report(report, out / "report.json");
  io::write_metrics_csv(report, out / "metrics.csv");
  const auto stats = nlohmann::json::parse(report.stats_json);
  std::string rel = "threshold,fraction\n";
  char buf[64];
  for (const auto& p : stats["dice_reliability"]) {
    std::snprintf(buf, sizeof buf, "%.2f,%.6f\n", p["threshold"].get<double>(), p["fraction"].get<double>());
    rel += buf;
  }
  io::write_text(out / "reliability.csv", rel);
  if (stats.contains("volume_bland_altman")) {
    const auto& ba = stats["volume_bland_altman"];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f\n", ba["bias"].get<double>(), ba["sd"].get<double>(),
                  ba["loa_low"].get<double>(), ba["loa_high"].get<double>());
    io::write_text(out / "bland_altman.csv", std::string("bias,sd,loa_low,loa_high\n") + buf);
  }
}

}  // namespace

reg::RegistrationConfig read_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config.json", path.string() + ": " + e.what());
  }
  return reg::config_from_json(j);
}

void run_segmentation(const Volume4D& vol, const StudyAnnotation& ann, const pipeline::Options& opt,
                      const fs::path& out, const std::optional<fs::path>& truth) {
  // Truth meshes are read first so a bad truth directory fails before the expensive part.
  std::vector<SurfaceMesh> truth_meshes;
  if (truth) {
    truth_meshes = read_meshes(mesh_files(*truth));
    if (static_cast<int>(truth_meshes.size()) != vol.frame_count())
      throw ValidationError("evaluate.frame_mismatch", "truth has " + std::to_string(truth_meshes.size()) +
                                                           " frames, volume has " +
                                                           std::to_string(vol.frame_count()));
  }
  const pipeline::StudyResult r = pipeline::segment_study(vol, ann, opt);
  fs::create_directories(out / "meshes");
  std::string csv = "frame,volume_mL\n";
  char buf[64];
  for (std::size_t f = 0; f < r.meshes.size(); ++f) {
    io::write_mesh(r.meshes[f], out / "meshes" / frame_name(f));
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", f, r.volumes_ml[f]);
    csv += buf;
  }
  io::write_text(out / "volumes.csv", csv);

  const double edv = r.volumes_ml[vol.ed_index], esv = r.volumes_ml[vol.es_index];
  nlohmann::json summary = {
      {"frames", vol.frame_count()},
      {"ed_index", vol.ed_index},
      {"es_index", vol.es_index},
      {"theta_d", opt.theta_d},
      {"spatial_theta_d", opt.spatial_theta_d},
      {"clinical", {{"EDV_ml", edv}, {"ESV_ml", esv}, {"EF_percent", eval::ejection_fraction(edv, esv)}}},
      {"registration", reg::config_to_json(opt.reg)},
      {"diagnostics",
       {{"registrations", r.diagnostics.registrations},
        {"not_converged", r.diagnostics.not_converged},
        {"min_jacobian", r.diagnostics.min_jacobian},
        {"clamped_points", r.diagnostics.clamped_points}}}};
  io::write_text(out / "summary.json", summary.dump(2) + "\n");

  if (truth) {
    std::vector<FrameMetrics> per_frame;
    for (std::size_t f = 0; f < r.meshes.size(); ++f)
      per_frame.push_back(eval::compare_meshes(r.meshes[f], truth_meshes[f], vol.frames[f], static_cast<int>(f)));
    write_report_files(eval::summarize(std::move(per_frame), vol.ed_index, vol.es_index), out);
  }
}

int cmd_segment(const SegmentArgs& a) {
  return guarded([&] {
    pipeline::Options opt;
    opt.theta_d = a.theta_d;
    opt.spatial_theta_d = a.spatial_theta_d;
    pipeline::validate_theta_d(opt.theta_d);
    pipeline::validate_theta_d(opt.spatial_theta_d);
    if (a.config) opt.reg = read_config(*a.config);
    opt.reg.validate();
    if (!fs::exists(a.annotation)) throw ValidationError("file.missing", "annotation not found: " + a.annotation.string());
    if (!fs::exists(a.volume)) throw ValidationError("file.missing", "volume not found: " + a.volume.string());
    const StudyAnnotation ann = io::read_annotation(a.annotation);
    const Volume4D vol = io::read_volume4d(a.volume);
    run_segmentation(vol, ann, opt, a.out, a.truth);
    std::cout << "wrote " << vol.frame_count() << " meshes to " << (a.out / "meshes").string() << "\n";
    return int(kOk);
  });
}

int cmd_phantom(const std::string& spec_arg, const fs::path& out, std::optional<std::uint64_t> seed) {
  return guarded([&] {
    phantom::PhantomSpec spec;
    if (spec_arg.ends_with(".json") || fs::is_regular_file(spec_arg)) {
      try {
        spec = phantom::spec_from_json(nlohmann::json::parse(io::read_text(spec_arg)));
      } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("phantom.json", e.what());
      }
    } else {
      spec = phantom::suite_member(spec_arg);
    }
    if (seed) spec.rng_seed = *seed;
    phantom::write_study(spec, out.string());
    std::cout << "wrote phantom '" << spec.name << "' (" << spec.frames << " frames) to " << out.string() << "\n";
    return int(kOk);
  });
}

int cmd_evaluate(const fs::path& pred_dir, const fs::path& truth_dir, const fs::path& out) {
  return guarded([&] {
    fs::path pred = pred_dir;
    if (mesh_files(pred).empty() && fs::is_directory(pred / "meshes")) pred /= "meshes";
    const auto pred_files = mesh_files(pred);
    const auto truth_files = mesh_files(truth_dir);
    if (pred_files.empty()) throw ValidationError("evaluate.empty", "no frame_*.obj in " + pred.string());
    if (truth_files.empty()) throw ValidationError("evaluate.empty", "no frame_*.obj in " + truth_dir.string());
    const auto pm = read_meshes(pred_files);
    const auto tm = read_meshes(truth_files);
    const nlohmann::json meta = read_truth_meta(truth_dir);
    int ed = 0, es = 0;
    if (meta.contains("ed_index")) {
      ed = meta["ed_index"].get<int>();
      es = meta["es_index"].get<int>();
    } else {
      // Without metadata, ED/ES are the largest and smallest truth volumes.
      std::vector<double> v;
      for (const auto& m : tm) v.push_back(mesh::mesh_volume(m));
      ed = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
      es = static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin());
    }
    const MetricsReport report = evaluate_meshes(pm, tm, dice_grid(meta, pm, tm), ed, es);
    write_report_files(report, out);
    std::cout << "evaluated " << pm.size() << " frames into " << out.string() << "\n";
    return int(kOk);
  });
}

int cmd_experiment(const std::string& name, const fs::path& out, int frame_stride) {
  return guarded([&] {
    const auto& known = experiments::names();
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw ValidationError("experiment.unknown", "unknown experiment '" + name + "'");
    experiments::Settings s;
    s.frame_stride = frame_stride;
    s.progress = [](const std::string& m) { std::cerr << m << "\n"; };
    const auto r = experiments::run(name, s);
    experiments::write_result(r, out);
    std::cout << experiments::format_table(r);
    return int(kOk);
  });
}

}  // namespace lvseg::app
