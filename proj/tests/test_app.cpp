#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <thread>

#include "app.hpp"
#include "fixtures.hpp"
#include "lvseg/io.hpp"
#include "png8.hpp"

// After the Eigen-based headers: resolv.h, pulled in by httplib, defines _res.
#include <httplib.h>

using namespace lvseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lvseg_app_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) { return io::read_text(p); }

/// Small phantom study written to disk once per process.
const fs::path& small_study() {
  static const fs::path dir = [] {
    const fs::path d = scratch("small") / "small";
    phantom::write_study(small_phantom(), d.string());
    return d;
  }();
  return dir;
}

app::SegmentArgs small_args(const fs::path& out) {
  app::SegmentArgs a;
  a.volume = small_study() / "volume.json";
  a.annotation = small_study() / "annotation.json";
  a.theta_d = 30.0;
  a.spatial_theta_d = 30.0;
  a.out = out;
  return a;
}

}  // namespace

TEST_CASE("png8 round-trips and clamps") {
  Image2D img(5, 3);
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = -0.5 + 0.15 * i;
  int w = 0, h = 0;
  const auto px = app::decode_png8(app::encode_png8(img), w, h);
  CHECK(w == 5);
  CHECK(h == 3);
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(px[i] == static_cast<int>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0)));
}

TEST_CASE("segment validates its inputs") {
  const fs::path out = scratch("seg_invalid");
  auto a = small_args(out / "o");
  a.theta_d = 7.0;
  CHECK(app::cmd_segment(a) == app::kValidation);
  a = small_args(out / "o");
  a.annotation = out / "missing.json";
  CHECK(app::cmd_segment(a) == app::kValidation);
  a = small_args(out / "o");
  a.config = out / "bad.json";
  io::write_text(*a.config, R"({"similarity": "XYZ"})");
  CHECK(app::cmd_segment(a) == app::kValidation);
  a = small_args(out / "o");
  a.truth = out;  // no truth meshes
  CHECK(app::cmd_segment(a) == app::kValidation);
  CHECK_FALSE(fs::exists(out / "o" / "meshes"));
}

TEST_CASE("segment writes meshes, volumes and a report") {
  const fs::path out = scratch("seg_ok");
  auto a = small_args(out);
  a.truth = small_study() / "truth";
  REQUIRE(app::cmd_segment(a) == app::kOk);
  for (int f = 0; f < 4; ++f) CHECK(fs::exists(out / "meshes" / ("frame_00" + std::to_string(f) + ".obj")));
  const std::string csv = slurp(out / "volumes.csv");
  CHECK(csv.starts_with("frame,volume_mL\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  const json report = json::parse(slurp(out / "report.json"));
  CHECK(report["per_frame"].size() == 4);
  CHECK(report["stats"]["dice"]["mean"].get<double>() > 0.85);
  CHECK(fs::exists(out / "reliability.csv"));
  CHECK(fs::exists(out / "bland_altman.csv"));
  CHECK(json::parse(slurp(out / "summary.json"))["diagnostics"]["min_jacobian"].get<double>() > 0.0);
}

TEST_CASE("phantom command") {
  const fs::path out = scratch("phantom");
  CHECK(app::cmd_phantom("nonexistent", out / "x") == app::kValidation);

  auto spec = small_phantom();
  spec.frames = 2;
  spec.es_frame = 1;
  io::write_text(out / "spec.json", phantom::spec_to_json(spec).dump());
  REQUIRE(app::cmd_phantom((out / "spec.json").string(), out / "a", 42) == app::kOk);
  REQUIRE(app::cmd_phantom((out / "spec.json").string(), out / "b", 42) == app::kOk);
  REQUIRE(app::cmd_phantom((out / "spec.json").string(), out / "c", 43) == app::kOk);
  CHECK(slurp(out / "a" / "volume.raw") == slurp(out / "b" / "volume.raw"));
  CHECK(slurp(out / "a" / "volume.raw") != slurp(out / "c" / "volume.raw"));
  CHECK(fs::exists(out / "a" / "truth" / "frame_001.obj"));

  io::write_text(out / "broken.json", "{ not json");
  CHECK(app::cmd_phantom((out / "broken.json").string(), out / "d") == app::kValidation);
}

TEST_CASE("evaluate command") {
  const fs::path out = scratch("evaluate");
  const fs::path truth = small_study() / "truth";
  REQUIRE(app::cmd_evaluate(truth, truth, out / "self") == app::kOk);
  const json r = json::parse(slurp(out / "self" / "report.json"));
  for (const auto& f : r["per_frame"]) {
    CHECK(f["d_m_mm"].get<double>() < 1e-9);
    CHECK(f["d_H_mm"].get<double>() < 1e-9);
    CHECK(f["dice"].get<double>() == 1.0);
  }
  fs::create_directories(out / "empty");
  CHECK(app::cmd_evaluate(out / "empty", truth, out / "e") == app::kValidation);
  CHECK(app::cmd_evaluate(truth, out / "empty", out / "e") == app::kValidation);

  fs::create_directories(out / "short");
  fs::copy_file(truth / "frame_000.obj", out / "short" / "frame_000.obj");
  CHECK(app::cmd_evaluate(out / "short", truth, out / "e") == app::kValidation);
}

TEST_CASE("unknown experiment") { CHECK(app::cmd_experiment("nope", scratch("exp")) == app::kValidation); }

TEST_CASE("segmentation output is deterministic") {
  const fs::path out = scratch("determinism");
  REQUIRE(app::cmd_segment(small_args(out / "a")) == app::kOk);
  REQUIRE(app::cmd_segment(small_args(out / "b")) == app::kOk);
  for (const auto& e : fs::recursive_directory_iterator(out / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), out / "a");
    CHECK_MESSAGE(slurp(e.path()) == slurp(out / "b" / rel), rel.string());
  }
}

TEST_CASE("http service") {
  // Two studies: the small phantom and a constant volume without annotation.
  const fs::path root = scratch("service");
  fs::copy(small_study(), root / "small", fs::copy_options::recursive);
  {
    Volume4D c;
    Volume3D f;
    f.dims = {20, 22, 24};
    f.spacing = {1.0, 1.5, 1.2};
    f.voxels.assign(f.voxel_count(), 0.6f);
    c.frames = {f, f};
    fs::create_directories(root / "constant");
    io::write_volume4d(c, root / "constant" / "volume.json");
  }
  const std::string before = slurp(root / "small" / "annotation.json");

  app::Service service(root, root / "_work");
  const int port = service.start("127.0.0.1", 0);
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(60);

  SUBCASE("study listing and metadata") {
    auto res = cli.Get("/api/studies");
    REQUIRE(res);
    CHECK(res->status == 200);
    const json list = json::parse(res->body);
    REQUIRE(list.size() == 2);
    CHECK(list[0]["id"] == "constant");
    CHECK(list[0]["has_annotation"] == false);
    CHECK(list[1]["frames"] == 4);

    res = cli.Get("/api/studies/small/meta");
    REQUIRE(res);
    const json meta = json::parse(res->body);
    CHECK(meta["frames"] == 4);
    CHECK(meta["slice"]["planes"].size() == 2);
    CHECK(meta["annotation"].is_object());
  }

  SUBCASE("unknown ids are 404") {
    for (const char* path : {"/api/studies/nope/meta", "/api/studies/nope/slice", "/api/jobs/job-99",
                             "/api/jobs/job-99/volumes", "/api/jobs/job-99/meshes/0"}) {
      auto res = cli.Get(path);
      REQUIRE(res);
      CHECK_MESSAGE(res->status == 404, path);
    }
    auto res = cli.Post("/api/studies/nope/segment", "{}", "application/json");
    REQUIRE(res);
    CHECK(res->status == 404);
  }

  SUBCASE("constant volume gives a constant slice") {
    auto res = cli.Get("/api/studies/constant/slice?frame=1&angle=0&format=png8");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    CHECK(res->get_header_value("Content-Type") == "image/png");
    int w = 0, h = 0;
    const auto px = app::decode_png8(res->body, w, h);
    // The raster is square around the volume, so only pixels inside the box
    // carry the constant; the rest are zero.
    const std::uint8_t level = static_cast<std::uint8_t>(std::lround(0.6 * 255.0));
    int inside = 0;
    for (auto v : px) {
      CHECK((v == level || v == 0));
      inside += v == level;
    }
    CHECK(inside > 0);
    // The slicing origin is the volume center, so it is inside.
    const json meta = json::parse(cli.Get("/api/studies/constant/meta")->body);
    const int cx = static_cast<int>(std::lround(meta["slice"]["center_col"].get<double>()));
    const int cy = static_cast<int>(std::lround(meta["slice"]["center_row"].get<double>()));
    CHECK(px[static_cast<std::size_t>(cy) * w + cx] == level);
  }

  SUBCASE("bad slice requests are 422 with the rule name") {
    auto res = cli.Get("/api/studies/constant/slice?frame=5");
    REQUIRE(res);
    CHECK(res->status == 422);
    CHECK(json::parse(res->body)["error"] == "slice.frame");
    res = cli.Get("/api/studies/constant/slice?format=jpeg");
    CHECK(json::parse(res->body)["error"] == "slice.format");
  }

  SUBCASE("invalid annotations are rejected with the rule name") {
    json ann = json::parse(before);
    ann["contours"][0]["points_mm"][2][1] = ann["contours"][0]["points_mm"][2][1].get<double>() + 2.0;
    auto res = cli.Post("/api/studies/small/annotation", ann.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 422);
    CHECK(json::parse(res->body)["error"] == "annotation.non_planar");
    res = cli.Post("/api/studies/small/annotation", "{oops", "application/json");
    CHECK(res->status == 422);
    CHECK(json::parse(res->body)["error"] == "request.json");
    res = cli.Post("/api/studies/constant/segment", "{}", "application/json");
    CHECK(res->status == 422);
    CHECK(json::parse(res->body)["error"] == "annotation.missing");
    res = cli.Post("/api/studies/small/segment", R"({"theta_d": 7})", "application/json");
    CHECK(res->status == 422);
    CHECK(json::parse(res->body)["error"] == "theta_d.divides_180");
  }

  SUBCASE("annotation upload and segmentation job") {
    auto res = cli.Post("/api/studies/small/annotation", before, "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(fs::exists(root / "_work" / "annotations" / "small.json"));

    res = cli.Post("/api/studies/small/segment", R"({"theta_d": 30, "spatial_theta_d": 30})", "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 202);
    const std::string job = json::parse(res->body)["job_id"];

    // Requests stay responsive while the job runs.
    auto during = cli.Get("/api/studies");
    REQUIRE(during);
    CHECK(during->status == 200);

    json status;
    for (int i = 0; i < 600; ++i) {
      status = json::parse(cli.Get("/api/jobs/" + job)->body);
      if (status["status"] == "done" || status["status"] == "failed") break;
      if (i == 0) {
        auto early = cli.Get("/api/jobs/" + job + "/volumes");
        if (status["status"] != "done") CHECK(early->status == 409);
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    REQUIRE(status["status"] == "done");
    CHECK(status["frames"] == 4);

    auto obj = cli.Get("/api/jobs/" + job + "/meshes/2");
    REQUIRE(obj);
    CHECK(obj->status == 200);
    CHECK(obj->body.find("\nf ") != std::string::npos);
    CHECK(cli.Get("/api/jobs/" + job + "/meshes/9")->status == 404);
    auto vols = cli.Get("/api/jobs/" + job + "/volumes");
    CHECK(vols->body.starts_with("frame,volume_mL\n"));
    CHECK(vols->body == slurp(root / "_work" / "jobs" / job / "volumes.csv"));
  }

  service.stop();
  CHECK(slurp(root / "small" / "annotation.json") == before);
}

TEST_CASE("service lists the phantom suite") {
  const fs::path root = scratch("suite");
  for (const auto& spec : phantom::default_suite()) phantom::write_study(spec, (root / spec.name).string());
  app::Service service(root, root / "_work");
  const int port = service.start("127.0.0.1", 0);
  httplib::Client cli("127.0.0.1", port);
  const json list = json::parse(cli.Get("/api/studies")->body);
  CHECK(list.size() == 4);
  for (const auto& s : list) CHECK(s["has_annotation"] == true);
  service.stop();
}
