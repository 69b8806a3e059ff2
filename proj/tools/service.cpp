#include <algorithm>

#include "app.hpp"
#include "lvseg/io.hpp"
#include "lvseg/slicer.hpp"
#include "png8.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines a _res macro.
#include <httplib.h>

namespace lvseg::app {

using nlohmann::json;

const char* job_status_name(JobStatus s) {
  switch (s) {
    case JobStatus::Pending: return "pending";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "unknown";
}

namespace {

void send_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& rule, const std::string& detail) {
  send_json(res, {{"error", rule}, {"detail", detail}}, status);
}

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

/// Axis used for slicing before any annotation exists: vertical through the
/// volume center, spanning half the z extent.
slicer::AxisFrame default_axis(const Volume3D& v) {
  const Vec3 c = 0.5 * v.extent_mm();
  const Vec3 dz(0.0, 0.0, 0.25 * v.extent_mm().z());
  return slicer::build_axis_frame(c - dz, c + dz);
}

json plane_json(const slicer::SlicePlane& p) {
  return {{"angle_deg", p.angle_deg},
          {"origin_mm", vec_json(p.origin)},
          {"axis_dir", vec_json(p.axis_dir())},
          {"radial_dir", vec_json(p.radial_dir())},
          {"normal", vec_json(p.normal())}};
}

std::string job_frame_name(int f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03d.obj", f);
  return buf;
}

}  // namespace

Service::Service(fs::path data_root, fs::path work_dir)
    : data_root_(std::move(data_root)), work_dir_(std::move(work_dir)), server_(std::make_unique<httplib::Server>()) {
  if (!fs::is_directory(data_root_)) throw ValidationError("service.data_root", "not a directory: " + data_root_.string());
  fs::create_directories(work_dir_ / "annotations");
  fs::create_directories(work_dir_ / "jobs");
  routes();
  worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

int Service::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw ValidationError("service.port", "cannot bind " + host + ":" + std::to_string(port));
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void Service::listen(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port))
    throw ValidationError("service.port", "cannot bind " + host + ":" + std::to_string(port));
  server_->listen_after_bind();
}

void Service::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
}

void Service::wait_idle() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
}

bool Service::has_study(const std::string& study) const {
  if (study.empty() || study.find('/') != std::string::npos || study.starts_with(".")) return false;
  return fs::is_regular_file(data_root_ / study / "volume.json");
}

std::shared_ptr<const Volume4D> Service::volume(const std::string& study) {
  {
    std::lock_guard lock(mu_);
    auto it = volumes_.find(study);
    if (it != volumes_.end()) return it->second;
  }
  auto v = std::make_shared<const Volume4D>(io::read_volume4d(data_root_ / study / "volume.json"));
  std::lock_guard lock(mu_);
  return volumes_.emplace(study, v).first->second;
}

std::optional<StudyAnnotation> Service::annotation(const std::string& study) {
  const fs::path posted = work_dir_ / "annotations" / (study + ".json");
  if (fs::exists(posted)) return io::read_annotation(posted);
  const fs::path original = data_root_ / study / "annotation.json";
  if (fs::exists(original)) return io::read_annotation(original);
  return std::nullopt;
}

void Service::routes() {
  auto& s = *server_;

  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const ValidationError& e) {
      send_error(res, 422, e.rule(), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  });

  s.Get("/api/studies", [this](const httplib::Request&, httplib::Response& res) {
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(data_root_))
      if (e.is_directory() && has_study(e.path().filename().string())) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    json out = json::array();
    for (const auto& id : ids) {
      const json header = json::parse(io::read_text(data_root_ / id / "volume.json"));
      out.push_back({{"id", id},
                     {"frames", header.value("frames", 0)},
                     {"has_annotation", fs::exists(work_dir_ / "annotations" / (id + ".json")) ||
                                            fs::exists(data_root_ / id / "annotation.json")}});
    }
    send_json(res, out);
  });

  s.Get(R"(/api/studies/([^/]+)/meta)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!has_study(id)) return send_error(res, 404, "study.unknown", "no study " + id);
    const auto vol = volume(id);
    const auto ann = annotation(id);
    const Volume3D& f0 = vol->frames.front();
    const slicer::AxisFrame axis = ann ? slicer::build_axis_frame(ann->apex, ann->base) : default_axis(f0);
    const slicer::SliceGeometry raster = slicer::slice_geometry_for(f0, axis);
    json meta = {{"id", id},
                 {"frames", vol->frame_count()},
                 {"ed_index", vol->ed_index},
                 {"es_index", vol->es_index},
                 {"dims", f0.dims},
                 {"spacing", f0.spacing},
                 {"axis", {{"apex", vec_json(axis.apex)}, {"base", vec_json(axis.base)}}},
                 {"slice",
                  {{"width", raster.width},
                   {"height", raster.height},
                   {"spacing_mm", raster.spacing},
                   {"center_col", raster.center_col},
                   {"center_row", raster.center_row},
                   {"planes",
                    {plane_json(slicer::make_slice_plane(axis, 0.0, raster)),
                     plane_json(slicer::make_slice_plane(axis, 90.0, raster))}}}}};
    meta["annotation"] = ann ? io::annotation_to_json(*ann) : json(nullptr);
    send_json(res, meta);
  });

  s.Get(R"(/api/studies/([^/]+)/slice)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!has_study(id)) return send_error(res, 404, "study.unknown", "no study " + id);
    const std::string format = req.has_param("format") ? req.get_param_value("format") : "png8";
    if (format != "png8") throw ValidationError("slice.format", "only format=png8 is supported");
    const auto vol = volume(id);
    int frame = vol->ed_index;
    double angle = 0.0;
    try {
      if (req.has_param("frame")) frame = std::stoi(req.get_param_value("frame"));
      if (req.has_param("angle")) angle = std::stod(req.get_param_value("angle"));
    } catch (const std::exception&) {
      throw ValidationError("slice.params", "frame and angle must be numbers");
    }
    if (frame < 0 || frame >= vol->frame_count()) throw ValidationError("slice.frame", "frame out of range");
    const auto ann = annotation(id);
    const Volume3D& v = vol->frames[frame];
    const slicer::AxisFrame axis = ann ? slicer::build_axis_frame(ann->apex, ann->base) : default_axis(v);
    const slicer::SlicePlane plane = slicer::make_slice_plane(axis, angle, slicer::slice_geometry_for(v, axis));
    const slicer::Slice2D slice = slicer::extract_slice(v, plane, frame);
    res.set_header("X-Slice-Spacing-Mm", std::to_string(plane.raster.spacing));
    res.set_content(encode_png8(slice.pixels), "image/png");
  });

  s.Post(R"(/api/studies/([^/]+)/annotation)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!has_study(id)) return send_error(res, 404, "study.unknown", "no study " + id);
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw ValidationError("request.json", e.what());
    }
    const StudyAnnotation ann = io::parse_annotation(body);
    io::write_annotation(ann, work_dir_ / "annotations" / (id + ".json"));
    send_json(res, {{"study", id}, {"accepted", true}});
  });

  s.Post(R"(/api/studies/([^/]+)/segment)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!has_study(id)) return send_error(res, 404, "study.unknown", "no study " + id);
    json body = json::object();
    if (!req.body.empty()) {
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error& e) {
        throw ValidationError("request.json", e.what());
      }
    }
    JobRecord job;
    job.study = id;
    try {
      job.theta_d = body.value("theta_d", 5.0);
      job.spatial_theta_d = body.value("spatial_theta_d", 1.0);
    } catch (const json::exception& e) {
      throw ValidationError("request.json", e.what());
    }
    pipeline::validate_theta_d(job.theta_d);
    pipeline::validate_theta_d(job.spatial_theta_d);
    const auto ann = annotation(id);
    if (!ann) throw ValidationError("annotation.missing", "study has no annotation");
    io::validate_annotation(*ann);
    job.annotation = *ann;
    {
      std::lock_guard lock(mu_);
      job.id = "job-" + std::to_string(next_job_++);
      job.dir = work_dir_ / "jobs" / job.id;
      queue_.push_back(job.id);
      jobs_[job.id] = job;
    }
    cv_.notify_all();
    send_json(res, {{"job_id", job.id}, {"status", "pending"}}, 202);
  });

  s.Get(R"(/api/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(req.matches[1]);
    if (it == jobs_.end()) return send_error(res, 404, "job.unknown", "no job " + std::string(req.matches[1]));
    const JobRecord& j = it->second;
    json out = {{"job_id", j.id},
                {"study", j.study},
                {"status", job_status_name(j.status)},
                {"theta_d", j.theta_d},
                {"spatial_theta_d", j.spatial_theta_d}};
    if (j.status == JobStatus::Failed) out["error"] = j.error;
    if (j.status == JobStatus::Done) {
      out["frames"] = j.frames;
      out["volumes"] = "/api/jobs/" + j.id + "/volumes";
      json meshes = json::array();
      for (int f = 0; f < j.frames; ++f) meshes.push_back("/api/jobs/" + j.id + "/meshes/" + std::to_string(f));
      out["meshes"] = meshes;
    }
    send_json(res, out);
  });

  auto finished_job = [this](const std::string& id, httplib::Response& res) -> std::optional<JobRecord> {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) {
      send_error(res, 404, "job.unknown", "no job " + id);
      return std::nullopt;
    }
    if (it->second.status != JobStatus::Done) {
      send_error(res, 409, "job.not_done", std::string("job is ") + job_status_name(it->second.status));
      return std::nullopt;
    }
    return it->second;
  };

  s.Get(R"(/api/jobs/([^/]+)/meshes/(\d+))", [finished_job](const httplib::Request& req, httplib::Response& res) {
    const auto job = finished_job(req.matches[1], res);
    if (!job) return;
    const int frame = std::stoi(req.matches[2]);
    if (frame < 0 || frame >= job->frames) return send_error(res, 404, "frame.unknown", "no frame " + std::string(req.matches[2]));
    res.set_content(io::read_text(job->dir / "meshes" / job_frame_name(frame)), "text/plain");
  });

  s.Get(R"(/api/jobs/([^/]+)/volumes)", [finished_job](const httplib::Request& req, httplib::Response& res) {
    const auto job = finished_job(req.matches[1], res);
    if (!job) return;
    res.set_content(io::read_text(job->dir / "volumes.csv"), "text/csv");
  });
}

void Service::worker_loop() {
  for (;;) {
    std::string id;
    JobRecord job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      busy_ = true;
      jobs_[id].status = JobStatus::Running;
      job = jobs_[id];
    }
    JobStatus status = JobStatus::Done;
    std::string error;
    int frames = 0;
    try {
      const auto vol = volume(job.study);
      pipeline::Options opt;
      opt.theta_d = job.theta_d;
      opt.spatial_theta_d = job.spatial_theta_d;
      const fs::path truth = data_root_ / job.study / "truth";
      run_segmentation(*vol, job.annotation, opt, job.dir,
                       fs::is_directory(truth) ? std::optional<fs::path>(truth) : std::nullopt);
      frames = vol->frame_count();
    } catch (const std::exception& e) {
      status = JobStatus::Failed;
      error = e.what();
    }
    {
      std::lock_guard lock(mu_);
      auto& rec = jobs_[id];
      rec.status = status;
      rec.error = error;
      rec.frames = frames;
      busy_ = false;
    }
    cv_.notify_all();
  }
}

}  // namespace lvseg::app
