#include <doctest.h>

#include <cmath>
#include <random>

#include "lvseg/registration.hpp"

using namespace lvseg;
using namespace lvseg::reg;

namespace {

Image2D blob(int w, int h, double cx, double cy, double r) {
  Image2D img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      img.at(x, y) = 0.2 + 0.7 / (1.0 + std::exp((d - r) / 1.5));
    }
  return img;
}

MovingMeshParams random_params(int w, int h, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  auto p = MovingMeshParams::identity(w, h);
  for (double& v : p.monitor.data) v = 1.0 + u(rng);
  for (double& v : p.rotation.data) v = u(rng);
  return p;
}

}  // namespace

TEST_CASE("objective gradient matches central differences") {
  for (auto sim : {Similarity::SSD, Similarity::NCC}) {
    const int w = 16, h = 16;
    const Image2D f = blob(w, h, 7.0, 8.0, 4.0);
    const Image2D m = blob(w, h, 8.5, 7.0, 4.5);
    const auto p = random_params(w, h, 7);
    RegistrationConfig cfg;
    cfg.similarity = sim;
    MovingMeshParams g;
    objective(f, m, p, cfg, &g);
    const double eps = 1e-6;
    double num2 = 0.0, err2 = 0.0;
    for (int comp = 0; comp < 2; ++comp)
      for (std::size_t i = 0; i < p.monitor.size(); ++i) {
        auto pp = p, pm = p;
        (comp == 0 ? pp.monitor : pp.rotation).data[i] += eps;
        (comp == 0 ? pm.monitor : pm.rotation).data[i] -= eps;
        const double fd = (objective(f, m, pp, cfg) - objective(f, m, pm, cfg)) / (2 * eps);
        const double an = (comp == 0 ? g.monitor : g.rotation).data[i];
        num2 += fd * fd;
        err2 += (fd - an) * (fd - an);
      }
    CHECK(std::sqrt(err2 / num2) < 1e-4);
  }
}

TEST_CASE("identity parameters give zero displacement") {
  const auto f = field_from_parameters(MovingMeshParams::identity(20, 12), 6);
  CHECK(f.max_displacement() == 0.0);
}

TEST_CASE("registering an image with itself is exact") {
  const Image2D f = blob(40, 40, 20, 20, 8);
  const auto fld = register_images(f, f, RegistrationConfig{});
  CHECK(fld.max_displacement() == 0.0);
  CHECK(fld.converged);
}

TEST_CASE("translation is recovered") {
  const int w = 64, h = 64;
  const Image2D f = blob(w, h, 30, 32, 10);
  const Image2D m = blob(w, h, 27, 32, 10);  // m(x) = f(x + 3)
  const auto fld = register_images(f, m, RegistrationConfig{});
  const Vec2 d = fld.displacement(30, 32);
  CHECK(d.x() == doctest::Approx(-3.0).epsilon(0.1));
  CHECK(std::abs(d.y()) < 0.3);
  CHECK(min_interior_jacobian(fld) > 0.0);
}
