#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "lvseg/image.hpp"

namespace lvseg {

/// Points per contour.
inline constexpr int kContourPoints = 64;

/// Open U-shaped endocardial contour in one angular plane: index 0 is the
/// basal hinge on the +radial side, the apex sits mid-contour, and the last
/// index is the basal hinge on the -radial side.
using Contour3D = std::vector<Vec3>;

/// Canonical map key for a slice angle (absorbs floating-point noise from
/// i * theta_d style computations).
inline double angle_key(double deg) { return std::round(deg * 1e6) / 1e6; }

/// Corresponded contours of one frame keyed by slice angle in degrees [0, 180).
struct ContourSet3D {
  int frame_index = 0;
  std::map<double, Contour3D> contours;

  int points_per_contour() const {
    return contours.empty() ? 0 : static_cast<int>(contours.begin()->second.size());
  }
  std::vector<double> angles() const {
    std::vector<double> a;
    for (const auto& [k, v] : contours) a.push_back(k);
    return a;
  }
};

}  // namespace lvseg

namespace lvseg {

/// Uniform arc-length resampling of an open polyline to n points; the end
/// points are kept.
template <typename V>
std::vector<V> resample_arclength(const std::vector<V>& pts, int n) {
  std::vector<V> out;
  if (pts.empty() || n < 2) return out;
  std::vector<double> s(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) s[i] = s[i - 1] + (pts[i] - pts[i - 1]).norm();
  const double total = s.back();
  out.reserve(n);
  std::size_t seg = 0;
  for (int k = 0; k < n; ++k) {
    if (k == 0) {
      out.push_back(pts.front());
      continue;
    }
    if (k == n - 1) {
      out.push_back(pts.back());
      continue;
    }
    const double target = total * k / (n - 1);
    while (seg + 2 < pts.size() && s[seg + 1] < target) ++seg;
    const double len = s[seg + 1] - s[seg];
    const double t = len > 0.0 ? (target - s[seg]) / len : 0.0;
    out.push_back(pts[seg] + (pts[seg + 1] - pts[seg]) * t);
  }
  return out;
}

}  // namespace lvseg
