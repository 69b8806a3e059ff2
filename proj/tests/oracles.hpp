#pragma once

// Brute-force reference implementations. They share no code with the library
// beyond the data types so they can serve as independent checks.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Geometry>

#include "lvseg/volume.hpp"

namespace oracle {

using lvseg::SurfaceMesh;
using lvseg::Vec3;

/// Closed UV ellipsoid with outward triangles.
inline SurfaceMesh ellipsoid(const Vec3& center, const Vec3& radii, const Eigen::Matrix3d& rot, int lon = 24,
                             int lat = 12) {
  SurfaceMesh m;
  const double pi = std::numbers::pi;
  m.vertices.push_back(center + rot * Vec3(0, 0, -radii.z()));
  for (int i = 1; i < lat; ++i) {
    const double t = pi * i / lat - pi / 2;
    for (int j = 0; j < lon; ++j) {
      const double p = 2 * pi * j / lon;
      const Vec3 u(std::cos(t) * std::cos(p), std::cos(t) * std::sin(p), std::sin(t));
      m.vertices.push_back(center + rot * u.cwiseProduct(radii));
    }
  }
  m.vertices.push_back(center + rot * Vec3(0, 0, radii.z()));
  const int top = static_cast<int>(m.vertices.size()) - 1;
  auto ring = [&](int i, int j) { return 1 + (i - 1) * lon + (j % lon); };
  for (int j = 0; j < lon; ++j) m.triangles.push_back({0, ring(1, j + 1), ring(1, j)});
  for (int i = 1; i + 1 < lat; ++i)
    for (int j = 0; j < lon; ++j) {
      m.triangles.push_back({ring(i, j), ring(i, j + 1), ring(i + 1, j + 1)});
      m.triangles.push_back({ring(i, j), ring(i + 1, j + 1), ring(i + 1, j)});
    }
  for (int j = 0; j < lon; ++j) m.triangles.push_back({top, ring(lat - 1, j), ring(lat - 1, j + 1)});
  return m;
}

inline SurfaceMesh sphere(const Vec3& c, double r, int lon = 128, int lat = 64) {
  return ellipsoid(c, Vec3::Constant(r), Eigen::Matrix3d::Identity(), lon, lat);
}

/// Axis-aligned box [lo, hi] with outward triangles.
inline SurfaceMesh box(const Vec3& lo, const Vec3& hi) {
  SurfaceMesh m;
  for (int k = 0; k < 8; ++k)
    m.vertices.emplace_back(k & 1 ? hi.x() : lo.x(), k & 2 ? hi.y() : lo.y(), k & 4 ? hi.z() : lo.z());
  const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& q : quads) {
    m.triangles.push_back({q[0], q[1], q[2]});
    m.triangles.push_back({q[0], q[2], q[3]});
  }
  return m;
}

inline double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (a + t * ab - p).norm();
}

/// Exact point-triangle distance: plane projection if it falls inside,
/// otherwise the nearest edge.
inline double triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a);
  const double nn = n.squaredNorm();
  if (nn > 0.0) {
    const Vec3 q = p - n * ((p - a).dot(n) / nn);
    const double wa = (b - q).cross(c - q).dot(n), wb = (c - q).cross(a - q).dot(n), wc = (a - q).cross(b - q).dot(n);
    if (wa >= 0 && wb >= 0 && wc >= 0) return (p - q).norm();
  }
  return std::min({segment_distance(p, a, b), segment_distance(p, b, c), segment_distance(p, c, a)});
}

inline double surface_distance(const Vec3& p, const SurfaceMesh& m) {
  double best = 1e300;
  for (const auto& t : m.triangles)
    best = std::min(best, triangle_distance(p, m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]));
  return best;
}

/// Uniform random points on the surface (area-weighted triangle choice).
inline std::vector<Vec3> random_surface_points(const SurfaceMesh& m, int n, unsigned seed) {
  std::vector<double> cum;
  double total = 0.0;
  for (const auto& t : m.triangles) {
    total += 0.5 * (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]).norm();
    cum.push_back(total);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) {
    const auto k = std::lower_bound(cum.begin(), cum.end(), u(rng) * total) - cum.begin();
    const auto& t = m.triangles[static_cast<std::size_t>(std::min<long>(k, static_cast<long>(cum.size()) - 1))];
    double r1 = u(rng), r2 = u(rng);
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    out.push_back(m.vertices[t[0]] + r1 * (m.vertices[t[1]] - m.vertices[t[0]]) +
                  r2 * (m.vertices[t[2]] - m.vertices[t[0]]));
  }
  return out;
}

/// Mean distance S -> R by the midpoint rule on n*n sub-triangles per triangle.
inline double mean_distance(const SurfaceMesh& s, const SurfaceMesh& r, int n = 10) {
  double sum = 0.0, area = 0.0;
  for (const auto& t : s.triangles) {
    const Vec3 &a = s.vertices[t[0]], &b = s.vertices[t[1]], &c = s.vertices[t[2]];
    const double w = 0.5 * (b - a).cross(c - a).norm() / (n * n);
    auto at = [&](double u, double v) { return a + u * (b - a) + v * (c - a); };
    for (int i = 0; i < n; ++i)
      for (int j = 0; i + j < n; ++j) {
        sum += w * surface_distance(at((3.0 * i + 1) / (3.0 * n), (3.0 * j + 1) / (3.0 * n)), r);
        if (i + j < n - 1) sum += w * surface_distance(at((3.0 * i + 2) / (3.0 * n), (3.0 * j + 2) / (3.0 * n)), r);
      }
    area += w * n * n;
  }
  return sum / area;
}

/// Max distance S -> R over a dense barycentric lattice of S.
inline double directed_hausdorff(const SurfaceMesh& s, const SurfaceMesh& r, int n = 8) {
  double best = 0.0;
  for (const auto& t : s.triangles)
    for (int i = 0; i <= n; ++i)
      for (int j = 0; i + j <= n; ++j) {
        const double a = double(i) / n, b = double(j) / n;
        const Vec3 p = (1 - a - b) * s.vertices[t[0]] + a * s.vertices[t[1]] + b * s.vertices[t[2]];
        best = std::max(best, surface_distance(p, r));
      }
  return best;
}

/// Random pair of overlapping ellipsoids for metric checks.
inline std::pair<SurfaceMesh, SurfaceMesh> random_mesh_pair(unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rad(12.0, 22.0), off(-2.5, 2.5), ang(-0.4, 0.4);
  auto rot = [&] {
    return Eigen::Matrix3d(Eigen::AngleAxisd(ang(rng), Vec3::UnitX()) * Eigen::AngleAxisd(ang(rng), Vec3::UnitY()) *
                           Eigen::AngleAxisd(ang(rng), Vec3::UnitZ()));
  };
  const Vec3 c(40, 40, 40);
  SurfaceMesh a = ellipsoid(c, Vec3(rad(rng), rad(rng), rad(rng)), rot(), 20, 10);
  SurfaceMesh b = ellipsoid(c + Vec3(off(rng), off(rng), off(rng)), Vec3(rad(rng), rad(rng), rad(rng)), rot(), 16, 9);
  return {a, b};
}

/// Kruskal-Wallis H from explicit average ranks with the tie correction.
inline double kw_h(const std::vector<std::vector<double>>& groups) {
  std::vector<std::pair<double, int>> all;
  for (int g = 0; g < static_cast<int>(groups.size()); ++g)
    for (double v : groups[g]) all.emplace_back(v, g);
  const double n = static_cast<double>(all.size());
  std::vector<double> rank_sum(groups.size(), 0.0);
  double ties = 0.0;
  for (const auto& [v, g] : all) {
    double less = 0, equal = 0;
    for (const auto& [w, h] : all) {
      less += w < v;
      equal += w == v;
    }
    rank_sum[g] += less + (equal + 1.0) / 2.0;
  }
  std::map<double, int> counts;
  for (const auto& [v, g] : all) ++counts[v];
  for (const auto& [v, t] : counts) ties += double(t) * t * t - t;
  double h = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) h += rank_sum[g] * rank_sum[g] / groups[g].size();
  h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1);
  const double corr = 1.0 - ties / (n * n * n - n);
  return corr > 0 ? h / corr : 0.0;
}

/// Exact permutation p-value: fraction of distinct label assignments with H
/// at least the observed one (up to round-off).
inline double kw_exact_p(const std::vector<std::vector<double>>& groups) {
  std::vector<double> pooled;
  std::vector<int> labels;
  for (int g = 0; g < static_cast<int>(groups.size()); ++g)
    for (double v : groups[g]) {
      pooled.push_back(v);
      labels.push_back(g);
    }
  const double observed = kw_h(groups);
  std::sort(labels.begin(), labels.end());
  long total = 0, extreme = 0;
  do {
    std::vector<std::vector<double>> perm(groups.size());
    for (std::size_t i = 0; i < pooled.size(); ++i) perm[labels[i]].push_back(pooled[i]);
    ++total;
    extreme += kw_h(perm) >= observed - 1e-9;
  } while (std::next_permutation(labels.begin(), labels.end()));
  return double(extreme) / total;
}

}  // namespace oracle
