#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "lvseg/errors.hpp"
#include "lvseg/evalstats.hpp"
#include "lvseg/io.hpp"
#include "lvseg/meshkit.hpp"
#include "lvseg/pipeline.hpp"

using namespace lvseg;

TEST_CASE("temporal weights are linear between the anchors") {
  CHECK(pipeline::temporal_weight(0, 10, 0, 4) == 1.0);
  CHECK(pipeline::temporal_weight(4, 10, 0, 4) == 0.0);
  CHECK(pipeline::temporal_weight(1, 10, 0, 4) == doctest::Approx(0.75));
  CHECK(pipeline::temporal_weight(7, 10, 0, 4) == doctest::Approx(0.5));
  CHECK(pipeline::temporal_weight(2, 10, 8, 4) == doctest::Approx(1.0 - 4.0 / 6.0));
}

TEST_CASE("theta_d must divide 90") {
  CHECK_NOTHROW(pipeline::validate_theta_d(5.0));
  CHECK_NOTHROW(pipeline::validate_theta_d(1.0));
  CHECK_THROWS_WITH_AS(pipeline::validate_theta_d(7.0), doctest::Contains("theta_d"), ValidationError);
  CHECK_THROWS_AS(pipeline::validate_theta_d(-5.0), ValidationError);
}

TEST_CASE("axis perturbation rotates the apex about the base") {
  const auto axis = slicer::build_axis_frame(Vec3(10, 20, 5), Vec3(12, 18, 40));
  for (const char* r : {"+x", "-x", "+y", "-y", "+z", "-z"}) {
    const auto p = pipeline::perturb_axis(axis, r, std::numbers::pi / 32);
    CHECK(p.length() == doctest::Approx(axis.length()));
    CHECK(p.base == axis.base);
    CHECK(p.v_hat.dot(axis.v_hat) <= 1.0);
  }
  // Rotating about an axis parallel to the LV axis changes nothing.
  const auto z_axis = slicer::build_axis_frame(Vec3(10, 10, 0), Vec3(10, 10, 30));
  CHECK((pipeline::perturb_axis(z_axis, "+z", 0.3).apex - z_axis.apex).norm() < 1e-12);
  CHECK_THROWS_AS(pipeline::perturb_axis(axis, "x", 0.1), ValidationError);
}

TEST_CASE("contour perturbation moves points radially") {
  const auto truth = phantom::make_truth(small_phantom());
  const auto dil = pipeline::perturb_contours(truth.annotation, 1.0);
  const auto& c0 = truth.annotation.ed.theta0;
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : c0) centroid += p;
  centroid /= c0.size();
  for (std::size_t i = 0; i < c0.size(); ++i)
    CHECK((dil.ed.theta0[i] - centroid).norm() == doctest::Approx((c0[i] - centroid).norm() + 1.0));
  CHECK_NOTHROW(io::validate_annotation(dil));
  CHECK_THROWS_AS(pipeline::perturb_contours(truth.annotation, 8.0), ValidationError);
}

TEST_CASE("small phantom study end to end") {
  const auto spec = small_phantom();
  const auto vol = phantom::render(spec);
  const auto truth = phantom::make_truth(spec);
  pipeline::Options opt;
  opt.spatial_theta_d = 15.0;
  opt.theta_d = 30.0;
  const auto r = pipeline::segment_study(vol, truth.annotation, opt);
  REQUIRE(r.meshes.size() == 4);

  SUBCASE("anchor frames equal the rebuilt spatial subsets") {
    const auto ed = mesh::build_mesh(mesh::extract_subset(r.ed_spatial_mesh, opt.theta_d));
    const auto es = mesh::build_mesh(mesh::extract_subset(r.es_spatial_mesh, opt.theta_d));
    CHECK(r.meshes[vol.ed_index].vertices == ed.vertices);
    CHECK(r.meshes[vol.es_index].vertices == es.vertices);
  }
  SUBCASE("every field is diffeomorphic") {
    CHECK(r.diagnostics.registrations > 0);
    CHECK(r.diagnostics.min_jacobian > 0.0);
  }
  SUBCASE("meshes track the truth") {
    for (int f = 0; f < 4; ++f) {
      const auto m = eval::compare_meshes(r.meshes[f], truth.meshes[f], vol.frames[f], f);
      CHECK(m.mean_distance_mm < 1.5);
      CHECK(m.dice > 0.85);
    }
  }
}

TEST_CASE("demons arm can be swapped in") {
  const auto spec = small_phantom();
  const auto vol = phantom::render(spec);
  const auto truth = phantom::make_truth(spec);
  pipeline::Options opt;
  opt.spatial_theta_d = 30.0;
  opt.theta_d = 30.0;
  opt.registrar = pipeline::demons_registrar();
  opt.require_diffeomorphic = false;
  const auto r = pipeline::segment_study(vol, truth.annotation, opt);
  CHECK(r.meshes.size() == 4);
  CHECK(r.diagnostics.registrations > 0);
}
