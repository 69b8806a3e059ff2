#include "lvseg/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "lvseg/errors.hpp"
#include "lvseg/meshkit.hpp"

namespace lvseg::eval {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

// ---------------------------------------------------------------------------
// BVH

struct TriangleBVH::Impl {
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1, right = -1;  // children, or -1 for leaves
    int first = 0, count = 0;   // triangle range for leaves
  };
  std::vector<Vec3> a, b, c;
  std::vector<int> order;
  std::vector<Node> nodes;

  int build(int first, int count, const std::vector<Vec3>& centroids) {
    Node node;
    for (int i = first; i < first + count; ++i) {
      const int t = order[i];
      node.box.extend(a[t]);
      node.box.extend(b[t]);
      node.box.extend(c[t]);
    }
    const int id = static_cast<int>(nodes.size());
    nodes.push_back(node);
    if (count <= 4) {
      nodes[id].first = first;
      nodes[id].count = count;
      return id;
    }
    Eigen::AlignedBox3d cbox;
    for (int i = first; i < first + count; ++i) cbox.extend(centroids[order[i]]);
    int dim;
    cbox.sizes().maxCoeff(&dim);
    const int mid = first + count / 2;
    std::nth_element(order.begin() + first, order.begin() + mid, order.begin() + first + count,
                     [&](int x, int y) { return centroids[x][dim] < centroids[y][dim]; });
    const int l = build(first, mid - first, centroids);
    const int r = build(mid, first + count - mid, centroids);
    nodes[id].left = l;
    nodes[id].right = r;
    return id;
  }

  void query(const Vec3& p, int node, double& best2, Vec3& best) const {
    const Node& n = nodes[node];
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        const int t = order[i];
        const Vec3 q = closest_point_on_triangle(p, a[t], b[t], c[t]);
        const double d2 = (q - p).squaredNorm();
        if (d2 < best2) {
          best2 = d2;
          best = q;
        }
      }
      return;
    }
    const double dl = nodes[n.left].box.squaredExteriorDistance(p);
    const double dr = nodes[n.right].box.squaredExteriorDistance(p);
    const int first = dl <= dr ? n.left : n.right;
    const int second = dl <= dr ? n.right : n.left;
    if (std::min(dl, dr) < best2) query(p, first, best2, best);
    if (std::max(dl, dr) < best2) query(p, second, best2, best);
  }
};

TriangleBVH::TriangleBVH(const SurfaceMesh& m) : impl_(std::make_unique<Impl>()) {
  if (m.empty()) throw ValidationError("metric.empty_mesh", "mesh has no triangles");
  std::vector<Vec3> centroids;
  for (const auto& t : m.triangles) {
    impl_->a.push_back(m.vertices[t[0]]);
    impl_->b.push_back(m.vertices[t[1]]);
    impl_->c.push_back(m.vertices[t[2]]);
    centroids.push_back((m.vertices[t[0]] + m.vertices[t[1]] + m.vertices[t[2]]) / 3.0);
  }
  impl_->order.resize(centroids.size());
  std::iota(impl_->order.begin(), impl_->order.end(), 0);
  impl_->build(0, static_cast<int>(centroids.size()), centroids);
}

TriangleBVH::~TriangleBVH() = default;
TriangleBVH::TriangleBVH(TriangleBVH&&) noexcept = default;
TriangleBVH& TriangleBVH::operator=(TriangleBVH&&) noexcept = default;

Vec3 TriangleBVH::closest_point(const Vec3& p) const {
  double best2 = std::numeric_limits<double>::infinity();
  Vec3 best = p;
  impl_->query(p, 0, best2, best);
  return best;
}

double TriangleBVH::distance(const Vec3& p) const { return (closest_point(p) - p).norm(); }

// ---------------------------------------------------------------------------
// Surface distances

SurfaceSamples sample_surface(const SurfaceMesh& m, int n) {
  SurfaceSamples s;
  const double inv = 1.0 / n;
  for (const auto& t : m.triangles) {
    const Vec3 &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
    const double w = 0.5 * (b - a).cross(c - a).norm() / (n * n);
    const Vec3 e1 = (b - a) * inv, e2 = (c - a) * inv;
    for (int i = 0; i < n; ++i)
      for (int j = 0; i + j < n; ++j) {
        // upright sub-triangle
        s.points.push_back(a + e1 * (i + 1.0 / 3.0) + e2 * (j + 1.0 / 3.0));
        s.weights.push_back(w);
        if (i + j + 1 < n) {  // inverted sub-triangle
          s.points.push_back(a + e1 * (i + 2.0 / 3.0) + e2 * (j + 2.0 / 3.0));
          s.weights.push_back(w);
        }
      }
  }
  return s;
}

namespace {

double directed_mean(const SurfaceMesh& s, const SurfaceMesh& r) {
  const TriangleBVH bvh(r);
  const auto samples = sample_surface(s);
  double acc = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < samples.points.size(); ++i) {
    acc += samples.weights[i] * bvh.distance(samples.points[i]);
    wsum += samples.weights[i];
  }
  if (wsum <= 0.0) throw ValidationError("metric.empty_mesh", "mesh has zero area");
  return acc / wsum;
}

}  // namespace

double mean_absolute_distance(const SurfaceMesh& s, const SurfaceMesh& r, bool symmetric) {
  if (s.empty() || r.empty()) throw ValidationError("metric.empty_mesh", "mesh has no triangles");
  const double d = directed_mean(s, r);
  return symmetric ? 0.5 * (d + directed_mean(r, s)) : d;
}

double directed_hausdorff(const SurfaceMesh& s, const SurfaceMesh& r, int subdivisions) {
  if (s.empty() || r.empty()) throw ValidationError("metric.empty_mesh", "mesh has no triangles");
  const TriangleBVH bvh(r);
  double worst = 0.0;
  for (const auto& t : s.triangles)
    for (int v : t) worst = std::max(worst, bvh.distance(s.vertices[v]));
  for (const auto& p : sample_surface(s, subdivisions).points) worst = std::max(worst, bvh.distance(p));
  return worst;
}

double hausdorff(const SurfaceMesh& s, const SurfaceMesh& r, int subdivisions) {
  return std::max(directed_hausdorff(s, r, subdivisions), directed_hausdorff(r, s, subdivisions));
}

double hausdorff(std::span<const Vec3> s, std::span<const Vec3> r) {
  if (s.empty() || r.empty()) throw ValidationError("metric.empty_mesh", "point set is empty");
  auto directed = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    double worst = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      worst = std::max(worst, best);
    }
    return std::sqrt(worst);
  };
  return std::max(directed(s, r), directed(r, s));
}

// ---------------------------------------------------------------------------
// Voxel overlap

std::size_t VoxelMask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

VoxelMask voxelize(const SurfaceMesh& mesh, const std::array<int, 3>& dims, const std::array<double, 3>& spacing) {
  const SurfaceMesh m = mesh::capped(mesh);
  VoxelMask out;
  out.dims = dims;
  out.spacing = spacing;
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  out.bits.assign(static_cast<std::size_t>(nx) * ny * nz, 0);
  // Rays sit slightly off the voxel centers so they avoid shared edges and vertices.
  constexpr double kJitterY = 1.234567e-5, kJitterZ = 2.345678e-5;
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(ny) * nz);
  for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t) {
    const auto& tri = m.triangles[t];
    double ylo = 1e300, yhi = -1e300, zlo = 1e300, zhi = -1e300;
    for (int v : tri) {
      ylo = std::min(ylo, m.vertices[v].y());
      yhi = std::max(yhi, m.vertices[v].y());
      zlo = std::min(zlo, m.vertices[v].z());
      zhi = std::max(zhi, m.vertices[v].z());
    }
    const int j0 = std::max(0, static_cast<int>(std::floor(ylo / spacing[1])));
    const int j1 = std::min(ny - 1, static_cast<int>(std::ceil(yhi / spacing[1])));
    const int k0 = std::max(0, static_cast<int>(std::floor(zlo / spacing[2])));
    const int k1 = std::min(nz - 1, static_cast<int>(std::ceil(zhi / spacing[2])));
    for (int k = k0; k <= k1; ++k)
      for (int j = j0; j <= j1; ++j) rows[static_cast<std::size_t>(k) * ny + j].push_back(t);
  }
  std::vector<double> hits;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j) {
      const auto& cand = rows[static_cast<std::size_t>(k) * ny + j];
      if (cand.empty()) continue;
      const double y = j * spacing[1] + kJitterY, z = k * spacing[2] + kJitterZ;
      hits.clear();
      for (int t : cand) {
        const Vec3& a = m.vertices[m.triangles[t][0]];
        const Vec3& b = m.vertices[m.triangles[t][1]];
        const Vec3& c = m.vertices[m.triangles[t][2]];
        // 2D barycentric test in the yz-plane
        const double d = (b.y() - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (b.z() - a.z());
        if (d == 0.0) continue;
        const double u = ((y - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (z - a.z())) / d;
        const double v = ((b.y() - a.y()) * (z - a.z()) - (y - a.y()) * (b.z() - a.z())) / d;
        if (u < 0.0 || v < 0.0 || u + v > 1.0) continue;
        hits.push_back(a.x() + u * (b.x() - a.x()) + v * (c.x() - a.x()));
      }
      std::sort(hits.begin(), hits.end());
      for (std::size_t h = 0; h + 1 < hits.size(); h += 2) {
        const int i0 = std::max(0, static_cast<int>(std::ceil(hits[h] / spacing[0])));
        const int i1 = std::min(nx - 1, static_cast<int>(std::floor(hits[h + 1] / spacing[0])));
        for (int i = i0; i <= i1; ++i) out.bits[(static_cast<std::size_t>(k) * ny + j) * nx + i] = 1;
      }
    }
  return out;
}

VoxelMask voxelize(const SurfaceMesh& m, const Volume3D& grid) {
  return voxelize(m, {grid.dims[0], grid.dims[1], grid.dims[2]}, {grid.spacing[0], grid.spacing[1], grid.spacing[2]});
}

DiceResult dice(const VoxelMask& s, const VoxelMask& r) {
  if (s.dims != r.dims) throw ValidationError("metric.grid_mismatch", "masks are on different grids");
  std::size_t inter = 0, ns = 0, nr = 0;
  for (std::size_t i = 0; i < s.bits.size(); ++i) {
    ns += s.bits[i];
    nr += r.bits[i];
    inter += s.bits[i] & r.bits[i];
  }
  if (ns + nr == 0) return {1.0, true};
  return {2.0 * inter / static_cast<double>(ns + nr), false};
}

double dice(const SurfaceMesh& s, const SurfaceMesh& r, const Volume3D& grid) {
  return dice(voxelize(s, grid), voxelize(r, grid)).value;
}

// ---------------------------------------------------------------------------
// Clinical and statistical summaries

double ejection_fraction(double edv_ml, double esv_ml) {
  if (!(edv_ml > 0.0)) throw ValidationError("metric.edv", "EDV must be positive");
  return (edv_ml - esv_ml) / edv_ml * 100.0;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw ValidationError("stats.empty", "empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
}

double stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / (xs.size() - 1));
}

BlandAltman bland_altman(std::span<const double> proposed, std::span<const double> reference) {
  if (proposed.size() != reference.size()) throw ValidationError("stats.length_mismatch", "lists differ in length");
  if (proposed.size() < 2) throw ValidationError("stats.too_short", "need at least two pairs");
  std::vector<double> d(proposed.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = proposed[i] - reference[i];
  BlandAltman ba;
  ba.bias = mean(d);
  ba.sd = stddev(d);
  ba.loa_low = ba.bias - 2.0 * ba.sd;
  ba.loa_high = ba.bias + 2.0 * ba.sd;
  return ba;
}

namespace {

struct Ranked {
  std::vector<double> ranks;  // in pooled order
  double tie_term = 0.0;      // sum of (t^3 - t)
};

Ranked average_ranks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  Ranked r;
  r.ranks.resize(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[idx[j + 1]] == pooled[idx[i]]) ++j;
    const double avg = 0.5 * (i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r.ranks[idx[k]] = avg;
    const double t = static_cast<double>(j - i + 1);
    r.tie_term += t * t * t - t;
    i = j + 1;
  }
  return r;
}

// H from group rank sums; `sizes` partition the ranks in order.
double h_from_ranks(const std::vector<double>& ranks, const std::vector<int>& sizes, double tie_term) {
  const double n = static_cast<double>(ranks.size());
  double acc = 0.0;
  std::size_t pos = 0;
  for (int sz : sizes) {
    double rs = 0.0;
    for (int k = 0; k < sz; ++k) rs += ranks[pos++];
    acc += rs * rs / sz;
  }
  double h = 12.0 / (n * (n + 1.0)) * acc - 3.0 * (n + 1.0);
  const double corr = 1.0 - tie_term / (n * n * n - n);
  return corr > 0.0 ? std::max(0.0, h / corr) : 0.0;
}

double multinomial(const std::vector<int>& sizes) {
  double c = 1.0;
  int total = 0;
  for (int s : sizes)
    for (int k = 1; k <= s; ++k) c = c * (++total) / k;
  return c;
}

// Enumerates every assignment of the pooled ranks to groups of the given sizes.
void enumerate(const std::vector<double>& ranks, const std::vector<int>& sizes, std::vector<int>& fill,
               std::vector<double>& sums, std::size_t pos, double tie_term, double h_obs, long& extreme,
               long& total) {
  if (pos == ranks.size()) {
    const double n = static_cast<double>(ranks.size());
    double acc = 0.0;
    for (std::size_t g = 0; g < sizes.size(); ++g) acc += sums[g] * sums[g] / sizes[g];
    double h = 12.0 / (n * (n + 1.0)) * acc - 3.0 * (n + 1.0);
    h /= 1.0 - tie_term / (n * n * n - n);
    ++total;
    if (h >= h_obs - 1e-9) ++extreme;
    return;
  }
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    if (fill[g] == sizes[g]) continue;
    ++fill[g];
    sums[g] += ranks[pos];
    enumerate(ranks, sizes, fill, sums, pos + 1, tie_term, h_obs, extreme, total);
    sums[g] -= ranks[pos];
    --fill[g];
  }
}

}  // namespace

double kruskal_wallis_h(const std::vector<std::vector<double>>& groups) {
  std::vector<double> pooled;
  std::vector<int> sizes;
  for (const auto& g : groups) {
    pooled.insert(pooled.end(), g.begin(), g.end());
    sizes.push_back(static_cast<int>(g.size()));
  }
  const Ranked r = average_ranks(pooled);
  return h_from_ranks(r.ranks, sizes, r.tie_term);
}

KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw ValidationError("stats.groups", "need at least two groups");
  for (const auto& g : groups)
    if (g.empty()) throw ValidationError("stats.groups", "groups must be non-empty");
  KruskalWallisResult res;
  res.group_count = static_cast<int>(groups.size());
  std::vector<double> pooled;
  std::vector<int> sizes;
  for (const auto& g : groups) {
    pooled.insert(pooled.end(), g.begin(), g.end());
    sizes.push_back(static_cast<int>(g.size()));
  }
  res.n_total = static_cast<int>(pooled.size());
  if (std::all_of(pooled.begin(), pooled.end(), [&](double v) { return v == pooled.front(); })) {
    res.full_tie = true;
    res.H = 0.0;
    res.p_value = 1.0;
    return res;
  }
  const Ranked r = average_ranks(pooled);
  res.H = h_from_ranks(r.ranks, sizes, r.tie_term);
  const bool small = std::any_of(sizes.begin(), sizes.end(), [](int s) { return s < 5; });
  if (small && multinomial(sizes) <= 1e6) {
    std::vector<int> fill(sizes.size(), 0);
    std::vector<double> sums(sizes.size(), 0.0);
    long extreme = 0, total = 0;
    enumerate(r.ranks, sizes, fill, sums, 0, r.tie_term, res.H, extreme, total);
    res.p_value = static_cast<double>(extreme) / total;
    res.exact = true;
  } else {
    res.p_value = boost::math::gamma_q(0.5 * (res.group_count - 1), 0.5 * res.H);
  }
  return res;
}

std::vector<ReliabilityPoint> dice_reliability_curve(std::span<const double> scores, int thresholds) {
  if (scores.empty()) throw ValidationError("stats.empty", "no scores");
  if (thresholds < 2) throw ValidationError("stats.thresholds", "need at least two thresholds");
  std::vector<ReliabilityPoint> curve;
  for (int i = 0; i < thresholds; ++i) {
    const double t = static_cast<double>(i) / (thresholds - 1);
    const auto n = std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= t; });
    curve.push_back({t, static_cast<double>(n) / scores.size()});
  }
  return curve;
}

double correlation(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("stats.length_mismatch", "lists differ in length");
  if (xs.size() < 2) throw ValidationError("stats.too_short", "need at least two pairs");
  const double mx = mean(xs), my = mean(ys);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  // Spreads at round-off level relative to the values count as constant.
  const double n = static_cast<double>(xs.size());
  if (sxx <= 1e-20 * n * (1.0 + mx * mx) || syy <= 1e-20 * n * (1.0 + my * my))
    throw ValidationError("stats.constant", "constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

FrameMetrics compare_meshes(const SurfaceMesh& seg, const SurfaceMesh& truth, const Volume3D& grid, int frame) {
  FrameMetrics m;
  m.frame = frame;
  m.mean_distance_mm = mean_absolute_distance(seg, truth);
  m.hausdorff_mm = hausdorff(seg, truth);
  m.dice = dice(seg, truth, grid);
  m.volume_ml = mesh::mesh_volume(seg);
  m.truth_volume_ml = mesh::mesh_volume(truth);
  return m;
}

MetricsReport summarize(std::vector<FrameMetrics> per_frame, int ed_index, int es_index) {
  const int n = static_cast<int>(per_frame.size());
  if (ed_index < 0 || ed_index >= n || es_index < 0 || es_index >= n)
    throw ValidationError("metric.phase_index", "ED/ES index outside the frame range");
  MetricsReport r;
  std::vector<double> dm, dh, dc, vol, tvol;
  for (const auto& f : per_frame) {
    dm.push_back(f.mean_distance_mm);
    dh.push_back(f.hausdorff_mm);
    dc.push_back(f.dice);
    vol.push_back(f.volume_ml);
    tvol.push_back(f.truth_volume_ml);
  }
  const auto& ed = per_frame[ed_index];
  const auto& es = per_frame[es_index];
  r.clinical = {ed.volume_ml, es.volume_ml, ejection_fraction(ed.volume_ml, es.volume_ml)};
  r.truth_clinical = ClinicalMetrics{ed.truth_volume_ml, es.truth_volume_ml,
                                     ejection_fraction(ed.truth_volume_ml, es.truth_volume_ml)};

  auto summary = [](const std::vector<double>& v) {
    return nlohmann::json{{"mean", mean(v)}, {"sd", v.size() > 1 ? stddev(v) : 0.0}};
  };
  nlohmann::json stats;
  stats["d_m_mm"] = summary(dm);
  stats["d_H_mm"] = summary(dh);
  stats["dice"] = summary(dc);
  if (n >= 2) {
    const BlandAltman ba = bland_altman(vol, tvol);
    stats["volume_bland_altman"] = {{"bias", ba.bias}, {"sd", ba.sd}, {"loa_low", ba.loa_low}, {"loa_high", ba.loa_high}};
    try {
      stats["volume_correlation"] = correlation(vol, tvol);
    } catch (const ValidationError&) {
      stats["volume_correlation"] = nullptr;  // constant curve (static study)
    }
  }
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : dice_reliability_curve(dc, 21)) curve.push_back({{"threshold", p.threshold}, {"fraction", p.fraction}});
  stats["dice_reliability"] = curve;
  r.stats_json = stats.dump();
  r.per_frame = std::move(per_frame);
  return r;
}

}  // namespace lvseg::eval
