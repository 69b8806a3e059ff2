#include <doctest.h>

#include <cmath>

#include "lvseg/errors.hpp"
#include "lvseg/meshkit.hpp"
#include "lvseg/phantom.hpp"
#include "lvseg/slicer.hpp"
#include "oracles.hpp"

using namespace lvseg;

namespace {

phantom::Shape spheroid() {
  phantom::Shape s;
  s.a = s.b = 22.0;
  s.c = 38.0;
  s.center = Vec3(40, 40, 50);
  return s;
}

ContourSet3D traced(const phantom::Shape& s, double theta_d) {
  const auto axis = slicer::build_axis_frame(s.apex(), s.base());
  ContourSet3D set;
  for (const auto& p : slicer::make_slice_planes(axis, theta_d, {1.0, 101, 101, 50, 50}))
    set.contours[angle_key(p.angle_deg)] = phantom::seed_contour(s, p);
  return set;
}

}  // namespace

TEST_CASE("mesh from traced contours encloses the analytic volume") {
  const auto s = spheroid();
  const SurfaceMesh m = mesh::build_mesh(traced(s, 5.0));
  REQUIRE(m.layout);
  CHECK(m.layout->num_angles == 72);
  CHECK(m.layout->points_per_meridian == kContourPoints / 2);
  CHECK(mesh::signed_volume_mm3(mesh::capped(m)) > 0.0);
  CHECK(mesh::mesh_volume(m) == doctest::Approx(s.volume_ml()).epsilon(0.02));
  CHECK(mesh::boundary_loop(m).size() == 72);
}

TEST_CASE("mesh vertices lie on the traced surface") {
  const auto s = spheroid();
  const SurfaceMesh m = mesh::build_mesh(traced(s, 10.0));
  const SurfaceMesh truth = phantom::truth_mesh(s);
  for (std::size_t i = 0; i < m.vertices.size(); i += 7) CHECK(oracle::surface_distance(m.vertices[i], truth) < 0.3);
}

TEST_CASE("subset extraction and rebuild reproduce the mesh") {
  const SurfaceMesh m = mesh::build_mesh(traced(spheroid(), 5.0));
  const ContourSet3D sub = mesh::extract_subset(m, 5.0);
  CHECK(sub.contours.size() == 36);
  const SurfaceMesh again = mesh::build_mesh(sub);
  CHECK(again.vertices == m.vertices);
  CHECK(again.triangles == m.triangles);
}

TEST_CASE("subset at a coarser spacing picks every n-th contour") {
  const ContourSet3D fine = traced(spheroid(), 5.0);
  const ContourSet3D sub = mesh::extract_subset(mesh::build_mesh(fine), 15.0);
  REQUIRE(sub.contours.size() == 12);
  for (const auto& [angle, c] : sub.contours) {
    REQUIRE(fine.contours.count(angle));
    const auto& ref = fine.contours.at(angle);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK((c[i] - ref[i]).norm() < mesh::kApexMergeMm + 1e-9);
  }
}

TEST_CASE("subset spacing must be a multiple of the mesh spacing") {
  const SurfaceMesh m = mesh::build_mesh(traced(spheroid(), 10.0));
  CHECK_THROWS_AS(mesh::extract_subset(m, 5.0), ValidationError);
  SurfaceMesh plain = m;
  plain.layout.reset();
  CHECK_THROWS_AS(mesh::extract_subset(plain, 10.0), ValidationError);
}

TEST_CASE("malformed contour sets are rejected") {
  ContourSet3D one;
  one.contours[0.0] = Contour3D(8, Vec3::Zero());
  CHECK_THROWS_AS(mesh::build_mesh(one), ValidationError);
  ContourSet3D odd = traced(spheroid(), 45.0);
  odd.contours.begin()->second.pop_back();
  CHECK_THROWS_AS(mesh::build_mesh(odd), ValidationError);
}

TEST_CASE("closed meshes have no boundary") {
  const auto b = oracle::box(Vec3(1, 1, 1), Vec3(3, 4, 5));
  CHECK(mesh::boundary_loop(b).empty());
  CHECK(mesh::mesh_volume(b) == doctest::Approx(0.024));
}

TEST_CASE("tessellated ellipsoid matches the truncated volume") {
  mesh::EllipsoidModel e;
  e.center = Vec3(30, 30, 30);
  e.semi_axes = Vec3(18, 22, 35);
  e.cut_z = 4.0;
  const SurfaceMesh m = mesh::tessellate(e);
  const double expected = phantom::truncated_ellipsoid_volume_mm3(18, 22, 35, 4.0) / 1000.0;
  CHECK(mesh::mesh_volume(m) == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("ellipsoid baseline from spheroid seeds") {
  const auto s = spheroid();
  const auto axis = slicer::build_axis_frame(s.apex(), s.base());
  const auto planes = slicer::make_slice_planes(axis, 90.0, {1.0, 101, 101, 50, 50});
  SeedPair seeds{phantom::seed_contour(s, planes[0]), phantom::seed_contour(s, planes[1])};
  const auto fit = mesh::fit_ellipsoid_baseline(axis, seeds);
  CHECK(fit.model.semi_axes.x() == doctest::Approx(s.a).epsilon(0.02));
  CHECK(fit.model.semi_axes.z() == doctest::Approx(axis.length()).epsilon(1e-9));
  CHECK((fit.model.center - s.base()).norm() < 1e-9);
}
