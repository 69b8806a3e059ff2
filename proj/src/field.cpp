#include "lvseg/field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lvseg/errors.hpp"

namespace lvseg::reg {

DeformationField2D DeformationField2D::identity(int w, int h) {
  DeformationField2D f;
  f.width = w;
  f.height = h;
  f.ux = Image2D(w, h);
  f.uy = Image2D(w, h);
  f.monitor = Image2D(w, h, 1.0);
  f.rotation = Image2D(w, h);
  return f;
}

DeformationField2D DeformationField2D::uniform(int w, int h, double dx, double dy) {
  auto f = identity(w, h);
  std::fill(f.ux.data.begin(), f.ux.data.end(), dx);
  std::fill(f.uy.data.begin(), f.uy.data.end(), dy);
  return f;
}

double DeformationField2D::max_displacement() const {
  double m = 0.0;
  for (std::size_t i = 0; i < ux.size(); ++i) m = std::max(m, std::hypot(ux.data[i], uy.data[i]));
  return m;
}

Image2D jacobian_determinant(const DeformationField2D& f) {
  Image2D J(f.width, f.height, std::numeric_limits<double>::quiet_NaN());
  for (int y = 1; y < f.height - 1; ++y)
    for (int x = 1; x < f.width - 1; ++x) {
      const double dxx = 1.0 + 0.5 * (f.ux.at(x + 1, y) - f.ux.at(x - 1, y));
      const double dxy = 0.5 * (f.ux.at(x, y + 1) - f.ux.at(x, y - 1));
      const double dyx = 0.5 * (f.uy.at(x + 1, y) - f.uy.at(x - 1, y));
      const double dyy = 1.0 + 0.5 * (f.uy.at(x, y + 1) - f.uy.at(x, y - 1));
      J.at(x, y) = dxx * dyy - dxy * dyx;
    }
  return J;
}

double min_interior_jacobian(const DeformationField2D& f) {
  double m = std::numeric_limits<double>::infinity();
  for (int y = 1; y < f.height - 1; ++y)
    for (int x = 1; x < f.width - 1; ++x) {
      const double dxx = 1.0 + 0.5 * (f.ux.at(x + 1, y) - f.ux.at(x - 1, y));
      const double dxy = 0.5 * (f.ux.at(x, y + 1) - f.ux.at(x, y - 1));
      const double dyx = 0.5 * (f.uy.at(x + 1, y) - f.uy.at(x - 1, y));
      const double dyy = 1.0 + 0.5 * (f.uy.at(x, y + 1) - f.uy.at(x, y - 1));
      m = std::min(m, dxx * dyy - dxy * dyx);
    }
  return m;
}

Image2D displacement_curl(const DeformationField2D& f) {
  Image2D c(f.width, f.height);
  for (int y = 1; y < f.height - 1; ++y)
    for (int x = 1; x < f.width - 1; ++x)
      c.at(x, y) = 0.5 * (f.uy.at(x + 1, y) - f.uy.at(x - 1, y)) - 0.5 * (f.ux.at(x, y + 1) - f.ux.at(x, y - 1));
  return c;
}

Image2D warp_image(const Image2D& moving, const DeformationField2D& f) {
  Image2D out(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x)
      out.at(x, y) = sample_bilinear(moving, x + f.ux.at(x, y), y + f.uy.at(x, y));
  return out;
}

WarpResult warp_points(std::span<const Vec2> points, const DeformationField2D& f) {
  WarpResult r;
  r.points.reserve(points.size());
  const double xmax = f.width - 1, ymax = f.height - 1;
  for (const auto& p : points) {
    Vec2 q(std::clamp(p.x(), 0.0, xmax), std::clamp(p.y(), 0.0, ymax));
    if (q != p) ++r.clamped;
    r.points.push_back(q + f.displacement(q.x(), q.y()));
  }
  return r;
}

DeformationField2D compose(const DeformationField2D& f, const DeformationField2D& g) {
  if (f.width != g.width || f.height != g.height)
    throw ValidationError("field.dims", "compose requires equal grid dimensions");
  DeformationField2D out = DeformationField2D::identity(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const double gx = g.ux.at(x, y), gy = g.uy.at(x, y);
      const double px = x + gx, py = y + gy;
      out.ux.at(x, y) = gx + sample_bilinear(f.ux, px, py);
      out.uy.at(x, y) = gy + sample_bilinear(f.uy, px, py);
      // Chain rule: det grad(f o g)(x) = det grad f(g(x)) * det grad g(x).
      out.monitor.at(x, y) = g.monitor.at(x, y) * sample_bilinear(f.monitor, px, py);
      out.rotation.at(x, y) = g.rotation.at(x, y) + sample_bilinear(f.rotation, px, py);
    }
  out.converged = f.converged && g.converged;
  const double jmin = min_interior_jacobian(out);
  if (!(jmin > 0.0))
    throw RegistrationError("composition degeneracy: min Jacobian " + std::to_string(jmin));
  return out;
}

nlohmann::json field_to_json(const DeformationField2D& f) {
  nlohmann::json j;
  j["width"] = f.width;
  j["height"] = f.height;
  j["ux"] = f.ux.data;
  j["uy"] = f.uy.data;
  j["monitor"] = f.monitor.data;
  j["rotation"] = f.rotation.data;
  j["converged"] = f.converged;
  j["min_jacobian"] = min_interior_jacobian(f);
  return j;
}

}  // namespace lvseg::reg
