#include "lvseg/demons.hpp"

#include <cmath>

#include "lvseg/errors.hpp"

namespace lvseg::reg {

namespace {

Image2D gradient_x(const Image2D& img) {
  Image2D g(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 1; x + 1 < img.width; ++x) g.at(x, y) = 0.5 * (img.at(x + 1, y) - img.at(x - 1, y));
  return g;
}

Image2D gradient_y(const Image2D& img) {
  Image2D g(img.width, img.height);
  for (int y = 1; y + 1 < img.height; ++y)
    for (int x = 0; x < img.width; ++x) g.at(x, y) = 0.5 * (img.at(x, y + 1) - img.at(x, y - 1));
  return g;
}

}  // namespace

DeformationField2D register_demons(const Image2D& fixed, const Image2D& moving, int iters, double sigma) {
  if (!fixed.same_shape(moving))
    throw ValidationError("registration.dims", "fixed and moving images must share dimensions");
  const int w = fixed.width, h = fixed.height;
  auto field = DeformationField2D::identity(w, h);
  const Image2D gx = gradient_x(fixed), gy = gradient_y(fixed);

  auto ssd = [&](const Image2D& warped) {
    double s = 0.0;
    for (std::size_t i = 0; i < warped.size(); ++i) {
      const double r = warped.data[i] - fixed.data[i];
      s += r * r;
    }
    return s / warped.size();
  };
  field.initial_similarity = ssd(moving);

  for (int it = 0; it < iters; ++it) {
    const Image2D warped = warp_image(moving, field);
    for (std::size_t i = 0; i < warped.size(); ++i) {
      const double diff = warped.data[i] - fixed.data[i];
      const double g2 = gx.data[i] * gx.data[i] + gy.data[i] * gy.data[i];
      const double denom = g2 + diff * diff;
      if (denom < 1e-12) continue;
      field.ux.data[i] -= diff * gx.data[i] / denom;
      field.uy.data[i] -= diff * gy.data[i] / denom;
    }
    field.ux = gaussian_blur(field.ux, sigma);
    field.uy = gaussian_blur(field.uy, sigma);
    for (int y = 0; y < h; ++y) {
      field.ux.at(0, y) = 0.0;
      field.ux.at(w - 1, y) = 0.0;
    }
    for (int x = 0; x < w; ++x) {
      field.uy.at(x, 0) = 0.0;
      field.uy.at(x, h - 1) = 0.0;
    }
  }

  const Image2D jac = jacobian_determinant(field);
  field.monitor = Image2D(w, h, 1.0);
  for (std::size_t i = 0; i < jac.size(); ++i)
    if (std::isfinite(jac.data[i])) field.monitor.data[i] = jac.data[i];
  field.rotation = displacement_curl(field);
  field.iterations = iters;
  field.converged = true;
  field.final_similarity = ssd(warp_image(moving, field));
  return field;
}

DeformationField2D register_demons(const slicer::Slice2D& fixed, const slicer::Slice2D& moving, int iters,
                                   double sigma) {
  return register_demons(fixed.pixels, moving.pixels, iters, sigma);
}

}  // namespace lvseg::reg
