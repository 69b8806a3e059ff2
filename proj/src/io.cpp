#include "lvseg/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lvseg/errors.hpp"
#include "lvseg/slicer.hpp"

namespace lvseg::io {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raw payloads assume a little-endian host");

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("file.missing", "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace {

json parse_json_file(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("json.syntax", path.string() + ": " + e.what());
  }
}

template <typename T>
T require(const json& j, const char* key, const char* rule) {
  if (!j.contains(key)) throw ValidationError(rule, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(rule, std::string("bad field '") + key + "': " + e.what());
  }
}

Vec3 to_vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3)
    throw ValidationError("annotation.point", std::string(what) + " must be [x,y,z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json from_vec3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

Volume4D read_volume4d(const fs::path& header_path) {
  const json h = parse_json_file(header_path);
  const auto dims = require<std::array<int, 3>>(h, "dims", "volume.header");
  const auto spacing = require<std::array<double, 3>>(h, "spacing_mm", "volume.header");
  const int frames = require<int>(h, "frames", "volume.header");
  const std::string dtype = require<std::string>(h, "dtype", "volume.header");
  const double max_value = require<double>(h, "max_value", "volume.header");
  const std::string data = require<std::string>(h, "data", "volume.header");
  if (dtype != "u8" && dtype != "f32") throw ValidationError("volume.dtype", "dtype must be u8 or f32");
  if (!(max_value > 0.0)) throw ValidationError("volume.max_value", "max_value must be positive");
  if (frames < 2) throw ValidationError("volume4d.frame_count", "need at least 2 frames");

  // Optional per-frame dims; every frame must match the shared geometry.
  if (h.contains("frame_dims")) {
    for (const auto& fd : h.at("frame_dims"))
      if (fd.get<std::array<int, 3>>() != dims)
        throw ValidationError("volume4d.dimension_mismatch", "frame dimensions differ across frames");
  }

  Volume4D vol;
  vol.ed_index = require<int>(h, "ed_index", "volume.header");
  vol.es_index = require<int>(h, "es_index", "volume.header");

  const std::size_t per_frame = static_cast<std::size_t>(std::max(dims[0], 0)) *
                                std::max(dims[1], 0) * std::max(dims[2], 0);
  const std::size_t bytes_per = dtype == "u8" ? 1 : 4;
  const std::string blob = read_text(header_path.parent_path() / data);
  if (blob.size() != per_frame * frames * bytes_per) {
    std::ostringstream os;
    os << "expected " << per_frame * frames * bytes_per << " bytes, got " << blob.size();
    throw ValidationError("volume.payload_size", os.str());
  }

  vol.frames.resize(frames);
  for (int f = 0; f < frames; ++f) {
    Volume3D& v = vol.frames[f];
    v.dims = dims;
    v.spacing = spacing;
    v.voxels.resize(per_frame);
    const char* src = blob.data() + f * per_frame * bytes_per;
    if (dtype == "u8") {
      for (std::size_t i = 0; i < per_frame; ++i)
        v.voxels[i] = static_cast<float>(static_cast<unsigned char>(src[i]) / max_value);
    } else {
      std::memcpy(v.voxels.data(), src, per_frame * 4);
      if (max_value != 1.0)
        for (float& x : v.voxels) x = static_cast<float>(x / max_value);
    }
    for (float& x : v.voxels) x = std::clamp(x, 0.0f, 1.0f);
  }
  vol.validate();
  return vol;
}

void write_volume4d(const Volume4D& vol, const fs::path& header_path, VoxelType type) {
  vol.validate();
  const Volume3D& f0 = vol.frames.front();
  const fs::path raw_name = header_path.stem().string() + ".raw";
  json h;
  h["dims"] = f0.dims;
  h["spacing_mm"] = f0.spacing;
  h["frames"] = vol.frame_count();
  h["dtype"] = type == VoxelType::U8 ? "u8" : "f32";
  h["max_value"] = type == VoxelType::U8 ? 255.0 : 1.0;
  h["ed_index"] = vol.ed_index;
  h["es_index"] = vol.es_index;
  h["data"] = raw_name.string();

  std::string blob;
  const std::size_t n = f0.voxel_count();
  blob.resize(n * vol.frames.size() * (type == VoxelType::U8 ? 1 : 4));
  for (std::size_t f = 0; f < vol.frames.size(); ++f) {
    const auto& vox = vol.frames[f].voxels;
    if (type == VoxelType::U8) {
      for (std::size_t i = 0; i < n; ++i)
        blob[f * n + i] = static_cast<char>(static_cast<unsigned char>(
            std::lround(std::clamp(vox[i], 0.0f, 1.0f) * 255.0f)));
    } else {
      std::memcpy(blob.data() + f * n * 4, vox.data(), n * 4);
    }
  }
  write_text(header_path, h.dump(2) + "\n");
  write_text(header_path.parent_path() / raw_name, blob);
}

void validate_annotation(const StudyAnnotation& a) {
  if (!((a.apex - a.base).norm() > 0.0))
    throw ValidationError("annotation.apex_equals_base", "apex and base must differ");
  const auto axis = slicer::build_axis_frame(a.apex, a.base);
  slicer::SliceGeometry raster;
  const auto p0 = slicer::make_slice_plane(axis, 0.0, raster);
  const auto p90 = slicer::make_slice_plane(axis, 90.0, raster);
  auto check = [&](const std::vector<Vec3>& c, const slicer::SlicePlane& plane, const char* label) {
    if (c.size() < 8)
      throw ValidationError("annotation.contour_points",
                            std::string(label) + " needs at least 8 points");
    for (const auto& p : c)
      if (std::abs(plane.plane_offset(p)) > kPlanarityTolerance)
        throw ValidationError("annotation.non_planar",
                              std::string(label) + " does not lie on its slice plane");
  };
  check(a.ed.theta0, p0, "ED/0");
  check(a.ed.theta90, p90, "ED/90");
  check(a.es.theta0, p0, "ES/0");
  check(a.es.theta90, p90, "ES/90");
}

StudyAnnotation parse_annotation(const json& j) {
  if (!j.is_object()) throw ValidationError("annotation.schema", "annotation must be an object");
  StudyAnnotation a;
  if (!j.contains("apex_mm") || !j.contains("base_mm"))
    throw ValidationError("annotation.axis", "apex_mm and base_mm are required");
  a.apex = to_vec3(j.at("apex_mm"), "apex_mm");
  a.base = to_vec3(j.at("base_mm"), "base_mm");
  if (!j.contains("contours") || !j.at("contours").is_array())
    throw ValidationError("annotation.schema", "contours array is required");

  bool seen[2][2] = {{false, false}, {false, false}};
  for (const auto& c : j.at("contours")) {
    const std::string phase = require<std::string>(c, "phase", "annotation.schema");
    const int angle = require<int>(c, "angle_deg", "annotation.schema");
    if ((phase != "ED" && phase != "ES") || (angle != 0 && angle != 90))
      throw ValidationError("annotation.label", "unknown contour label " + phase + "/" + std::to_string(angle));
    const int pi = phase == "ED" ? 0 : 1;
    const int ai = angle == 0 ? 0 : 1;
    if (seen[pi][ai]) throw ValidationError("annotation.duplicate_label", phase + "/" + std::to_string(angle));
    seen[pi][ai] = true;
    std::vector<Vec3> pts;
    for (const auto& p : c.at("points_mm")) pts.push_back(to_vec3(p, "points_mm"));
    SeedPair& sp = pi == 0 ? a.ed : a.es;
    (ai == 0 ? sp.theta0 : sp.theta90) = std::move(pts);
  }
  const char* names[2][2] = {{"ED/0", "ED/90"}, {"ES/0", "ES/90"}};
  for (int p = 0; p < 2; ++p)
    for (int q = 0; q < 2; ++q)
      if (!seen[p][q]) throw ValidationError("annotation.missing_label", std::string("missing contour ") + names[p][q]);
  validate_annotation(a);
  return a;
}

StudyAnnotation read_annotation(const fs::path& path) { return parse_annotation(parse_json_file(path)); }

json annotation_to_json(const StudyAnnotation& a) {
  json j;
  j["apex_mm"] = from_vec3(a.apex);
  j["base_mm"] = from_vec3(a.base);
  json cs = json::array();
  auto add = [&](const char* phase, int angle, const std::vector<Vec3>& pts) {
    json pj = json::array();
    for (const auto& p : pts) pj.push_back(from_vec3(p));
    cs.push_back({{"phase", phase}, {"angle_deg", angle}, {"points_mm", pj}});
  };
  add("ED", 0, a.ed.theta0);
  add("ED", 90, a.ed.theta90);
  add("ES", 0, a.es.theta0);
  add("ES", 90, a.es.theta90);
  j["contours"] = cs;
  return j;
}

void write_annotation(const StudyAnnotation& a, const fs::path& path) {
  write_text(path, annotation_to_json(a).dump(2) + "\n");
}

std::string mesh_to_obj(const SurfaceMesh& mesh) {
  mesh.validate();
  std::string out;
  char buf[128];
  if (mesh.layout) {
    std::snprintf(buf, sizeof buf, "# layout %d %d\n", mesh.layout->num_angles,
                  mesh.layout->points_per_meridian);
    out += buf;
  }
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out += buf;
  }
  for (const auto& t : mesh.triangles) {
    std::snprintf(buf, sizeof buf, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out += buf;
  }
  return out;
}

void write_mesh(const SurfaceMesh& mesh, const fs::path& path) { write_text(path, mesh_to_obj(mesh)); }

SurfaceMesh read_mesh(const fs::path& path) {
  std::istringstream in(read_text(path));
  SurfaceMesh m;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      ls >> x >> y >> z;
      m.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::array<int, 3> t{};
      for (int& i : t) {
        std::string tok;
        ls >> tok;
        i = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      m.triangles.push_back(t);
    } else if (tag == "#") {
      std::string key;
      ls >> key;
      if (key == "layout") {
        MeridianLayout l;
        ls >> l.num_angles >> l.points_per_meridian;
        m.layout = l;
      }
    }
  }
  m.validate();
  return m;
}

json report_to_json(const MetricsReport& r) {
  json j;
  json frames = json::array();
  for (const auto& f : r.per_frame)
    frames.push_back({{"frame", f.frame},
                      {"d_m_mm", f.mean_distance_mm},
                      {"d_H_mm", f.hausdorff_mm},
                      {"dice", f.dice},
                      {"volume_ml", f.volume_ml},
                      {"truth_volume_ml", f.truth_volume_ml}});
  j["per_frame"] = frames;
  j["clinical"] = {{"EDV_ml", r.clinical.edv_ml}, {"ESV_ml", r.clinical.esv_ml}, {"EF_percent", r.clinical.ef_percent}};
  if (r.truth_clinical)
    j["truth_clinical"] = {{"EDV_ml", r.truth_clinical->edv_ml},
                           {"ESV_ml", r.truth_clinical->esv_ml},
                           {"EF_percent", r.truth_clinical->ef_percent}};
  j["stats"] = r.stats_json.empty() ? json::object() : json::parse(r.stats_json);
  return j;
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  for (const auto& f : j.at("per_frame"))
    r.per_frame.push_back({f.at("frame").get<int>(), f.at("d_m_mm").get<double>(), f.at("d_H_mm").get<double>(),
                           f.at("dice").get<double>(), f.at("volume_ml").get<double>(),
                           f.value("truth_volume_ml", 0.0)});
  const auto& c = j.at("clinical");
  r.clinical = {c.at("EDV_ml").get<double>(), c.at("ESV_ml").get<double>(), c.at("EF_percent").get<double>()};
  if (j.contains("truth_clinical")) {
    const auto& t = j.at("truth_clinical");
    r.truth_clinical = ClinicalMetrics{t.at("EDV_ml").get<double>(), t.at("ESV_ml").get<double>(),
                                       t.at("EF_percent").get<double>()};
  }
  if (j.contains("stats")) r.stats_json = j.at("stats").dump();
  return r;
}

void write_report(const MetricsReport& r, const fs::path& path) {
  write_text(path, report_to_json(r).dump(2) + "\n");
}

void write_metrics_csv(const MetricsReport& r, const fs::path& path) {
  std::string out = "frame,d_m_mm,d_H_mm,dice,volume_ml,truth_volume_ml\n";
  char buf[256];
  for (const auto& f : r.per_frame) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", f.frame, f.mean_distance_mm,
                  f.hausdorff_mm, f.dice, f.volume_ml, f.truth_volume_ml);
    out += buf;
  }
  write_text(path, out);
}

}  // namespace lvseg::io
