#include "lvseg/image.hpp"

#include <algorithm>
#include <cmath>

namespace lvseg {

namespace {

// Cell index and fractional offset along one axis, clamped to [0, n-1].
inline void locate(double x, int n, int& i0, double& f) {
  if (n == 1) {
    i0 = 0;
    f = 0.0;
    return;
  }
  x = std::clamp(x, 0.0, static_cast<double>(n - 1));
  i0 = static_cast<int>(std::floor(x));
  if (i0 >= n - 1) i0 = n - 2;
  f = x - i0;
}

}  // namespace

double sample_bilinear(const Image2D& img, double x, double y) {
  int i0, j0;
  double fx, fy;
  locate(x, img.width, i0, fx);
  locate(y, img.height, j0, fy);
  const int i1 = std::min(i0 + 1, img.width - 1);
  const int j1 = std::min(j0 + 1, img.height - 1);
  const double v00 = img.at(i0, j0), v10 = img.at(i1, j0);
  const double v01 = img.at(i0, j1), v11 = img.at(i1, j1);
  return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

double sample_bilinear_grad(const Image2D& img, double x, double y, double& dx, double& dy) {
  const bool out_x = x < 0.0 || x > img.width - 1;
  const bool out_y = y < 0.0 || y > img.height - 1;
  int i0, j0;
  double fx, fy;
  locate(x, img.width, i0, fx);
  locate(y, img.height, j0, fy);
  const int i1 = std::min(i0 + 1, img.width - 1);
  const int j1 = std::min(j0 + 1, img.height - 1);
  const double v00 = img.at(i0, j0), v10 = img.at(i1, j0);
  const double v01 = img.at(i0, j1), v11 = img.at(i1, j1);
  dx = out_x ? 0.0 : (1 - fy) * (v10 - v00) + fy * (v11 - v01);
  dy = out_y ? 0.0 : (1 - fx) * (v01 - v00) + fx * (v11 - v10);
  return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

inline int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace

Image2D gaussian_blur(const Image2D& img, double sigma) {
  if (sigma <= 0.0) return img;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int w = img.width, h = img.height;
  Image2D tmp(w, h);
  std::vector<double> row(w + 2 * r);
  for (int y = 0; y < h; ++y) {
    for (int x = -r; x < w + r; ++x) row[x + r] = img.at(mirror(x, w), y);
    double* dst = &tmp.data[static_cast<std::size_t>(y) * w];
    for (int x = 0; x < w; ++x) {
      const double* src = &row[x];
      double acc = 0.0;
      for (std::size_t t = 0; t < k.size(); ++t) acc += k[t] * src[t];
      dst[x] = acc;
    }
  }
  Image2D out(w, h);
  for (int y = 0; y < h; ++y) {
    double* dst = &out.data[static_cast<std::size_t>(y) * w];
    for (int t = -r; t <= r; ++t) {
      const double kt = k[t + r];
      const double* src = &tmp.data[static_cast<std::size_t>(mirror(y + t, h)) * w];
      for (int x = 0; x < w; ++x) dst[x] += kt * src[x];
    }
  }
  return out;
}

Image2D resample_corner_aligned(const Image2D& img, int w, int h) {
  Image2D out(w, h);
  const double sx = w > 1 ? static_cast<double>(img.width - 1) / (w - 1) : 0.0;
  const double sy = h > 1 ? static_cast<double>(img.height - 1) / (h - 1) : 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(x, y) = sample_bilinear(img, x * sx, y * sy);
  return out;
}

}  // namespace lvseg
