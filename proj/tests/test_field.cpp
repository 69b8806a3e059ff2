#include <doctest.h>

#include <cmath>

#include "lvseg/demons.hpp"
#include "lvseg/errors.hpp"
#include "lvseg/field.hpp"
#include "lvseg/poisson.hpp"

using namespace lvseg;
using namespace lvseg::reg;

namespace {

Image2D smooth_field(int w, int h, double kx, double ky, double phase) {
  Image2D img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = std::sin(kx * x + phase) * std::cos(ky * y) + 0.3 * std::cos(kx * y);
  return img;
}

Image2D blob(int w, int h, double cx, double cy, double r) {
  Image2D img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = 0.2 + 0.7 / (1.0 + std::exp((std::hypot(x - cx, y - cy) - r) / 1.5));
  return img;
}

double max_abs_diff(const Image2D& a, const Image2D& b, int margin = 0) {
  double m = 0.0;
  for (int y = margin; y < a.height - margin; ++y)
    for (int x = margin; x < a.width - margin; ++x) m = std::max(m, std::abs(a.at(x, y) - b.at(x, y)));
  return m;
}

}  // namespace

TEST_CASE("bilinear sampling is exact at nodes and linear between") {
  Image2D img(3, 2);
  img.data = {0, 1, 2, 10, 11, 12};
  CHECK(sample_bilinear(img, 1, 1) == 11.0);
  CHECK(sample_bilinear(img, 0.5, 0.5) == doctest::Approx(5.5));
  double dx, dy;
  sample_bilinear_grad(img, 1.25, 0.5, dx, dy);
  CHECK(dx == doctest::Approx(1.0));
  CHECK(dy == doctest::Approx(10.0));
  CHECK(sample_bilinear(img, -3.0, 9.0) == 10.0);
}

TEST_CASE("uniform fields compose by addition") {
  const auto f = DeformationField2D::uniform(20, 16, 0.5, -0.25);
  const auto g = DeformationField2D::uniform(20, 16, 0.75, 0.5);
  const auto fg = compose(f, g);
  CHECK(fg.displacement(7, 9).x() == doctest::Approx(1.25));
  CHECK(fg.displacement(7, 9).y() == doctest::Approx(0.25));
}

TEST_CASE("composition with the identity is the field itself") {
  auto f = DeformationField2D::identity(24, 20);
  f.ux = smooth_field(24, 20, 0.2, 0.15, 0.3);
  f.uy = smooth_field(24, 20, 0.1, 0.25, 1.1);
  for (double& v : f.ux.data) v *= 0.5;
  for (double& v : f.uy.data) v *= 0.5;
  const auto id = DeformationField2D::identity(24, 20);
  CHECK(max_abs_diff(compose(f, id).ux, f.ux) < 1e-12);
  CHECK(max_abs_diff(compose(id, f).uy, f.uy) < 1e-12);
}

TEST_CASE("folding composition is rejected") {
  auto f = DeformationField2D::identity(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) f.ux.at(x, y) = x == 8 ? -3.0 : 0.0;
  CHECK(min_interior_jacobian(f) < 0.0);
  CHECK_THROWS_AS(compose(f, DeformationField2D::identity(16, 16)), RegistrationError);
}

TEST_CASE("jacobian of an affine field") {
  auto f = DeformationField2D::identity(12, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 12; ++x) {
      f.ux.at(x, y) = 0.1 * x + 0.05 * y;
      f.uy.at(x, y) = -0.02 * x + 0.2 * y;
    }
  const Image2D J = jacobian_determinant(f);
  CHECK(J.at(5, 5) == doctest::Approx(1.1 * 1.2 + 0.05 * 0.02));
  CHECK(std::isnan(J.at(0, 3)));
}

TEST_CASE("warping images and points by a shift") {
  const Image2D m = blob(32, 32, 16, 16, 6);
  const auto f = DeformationField2D::uniform(32, 32, 2.0, 0.0);
  const Image2D w = warp_image(m, f);
  CHECK(w.at(14, 16) == doctest::Approx(m.at(16, 16)));
  std::vector<Vec2> pts{{3, 4}, {40, 5}};
  const auto r = warp_points(pts, f);
  CHECK((r.points[0] - Vec2(5, 4)).norm() < 1e-12);
  CHECK(r.clamped == 1);
}

TEST_CASE("neumann solve inverts the laplacian") {
  for (auto [w, h] : {std::pair{17, 13}, std::pair{32, 32}, std::pair{5, 40}}) {
    PoissonSolver solver(w, h);
    Image2D p = smooth_field(w, h, 0.3, 0.2, 0.7);
    double mean = 0.0;
    for (double v : p.data) mean += v;
    mean /= p.size();
    for (double& v : p.data) v -= mean;
    const Image2D back = solver.solve_neumann(laplacian_neumann(p));
    CHECK(max_abs_diff(back, p) < 1e-9);
  }
}

TEST_CASE("dirichlet solve inverts the laplacian") {
  const int w = 21, h = 18;
  PoissonSolver solver(w, h);
  Image2D p = smooth_field(w, h, 0.4, 0.3, 0.2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (x == 0 || y == 0 || x == w - 1 || y == h - 1) p.at(x, y) = 0.0;
  const Image2D back = solver.solve_dirichlet(laplacian_dirichlet(p));
  CHECK(max_abs_diff(back, p) < 1e-9);
}

TEST_CASE("solvers of the same size share results") {
  const Image2D rhs = laplacian_neumann(smooth_field(19, 11, 0.3, 0.5, 0.1));
  PoissonSolver a(19, 11), b(19, 11);
  CHECK(a.solve_neumann(rhs).data == b.solve_neumann(rhs).data);
}

TEST_CASE("demons recovers a small shift") {
  const Image2D f = blob(64, 64, 32, 32, 10);
  const Image2D m = blob(64, 64, 30, 32, 10);
  const auto fld = register_demons(f, m);
  CHECK(fld.displacement(22, 32).x() == doctest::Approx(-2.0).epsilon(0.25));
  CHECK(std::abs(fld.displacement(22, 32).y()) < 0.3);
}

TEST_CASE("demons of identical images is the identity") {
  const Image2D f = blob(40, 40, 20, 20, 8);
  CHECK(register_demons(f, f).max_displacement() == 0.0);
}
