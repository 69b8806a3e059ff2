#include "lvseg/poisson.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <vector>

#include <fftw3.h>

namespace lvseg::reg {

namespace {
// FFTW planning is not thread-safe; execution with new-array calls is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

struct PoissonSolver::Plans {
  int w = 0, h = 0;
  double* buf_n = nullptr;  // w * h
  double* buf_d = nullptr;  // (w - 2) * (h - 2)
  fftw_plan dct_fwd = nullptr, dct_inv = nullptr, dst = nullptr;
  std::vector<double> eig_n;  // h * w, Neumann eigenvalues (lambda_x + lambda_y)
  std::vector<double> eig_d;  // interior Dirichlet eigenvalues

  ~Plans() {
    std::lock_guard lock(planner_mutex());
    if (dct_fwd) fftw_destroy_plan(dct_fwd);
    if (dct_inv) fftw_destroy_plan(dct_inv);
    if (dst) fftw_destroy_plan(dst);
    fftw_free(buf_n);
    fftw_free(buf_d);
  }
};

std::shared_ptr<const PoissonSolver::Plans> PoissonSolver::plans_for(int width, int height) {
  // Plans are shared per grid size; executing a plan on new arrays is thread-safe.
  std::mutex& mutex = planner_mutex();  // constructed first so it outlives the cache
  static std::map<std::pair<int, int>, std::shared_ptr<const Plans>> cache;
  {
    std::lock_guard lock(mutex);
    auto it = cache.find({width, height});
    if (it != cache.end()) return it->second;
  }
  auto plans = std::make_shared<Plans>();
  auto& P = *plans;
  P.w = width;
  P.h = height;
  const double pi = std::numbers::pi;
  {
    std::lock_guard lock(planner_mutex());
    P.buf_n = fftw_alloc_real(static_cast<std::size_t>(width) * height);
    // FFTW arrays are row-major with the last index fastest: (h, w).
    P.dct_fwd = fftw_plan_r2r_2d(height, width, P.buf_n, P.buf_n, FFTW_REDFT10, FFTW_REDFT10, FFTW_ESTIMATE | FFTW_UNALIGNED);
    P.dct_inv = fftw_plan_r2r_2d(height, width, P.buf_n, P.buf_n, FFTW_REDFT01, FFTW_REDFT01, FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (width > 2 && height > 2) {
      P.buf_d = fftw_alloc_real(static_cast<std::size_t>(width - 2) * (height - 2));
      P.dst = fftw_plan_r2r_2d(height - 2, width - 2, P.buf_d, P.buf_d, FFTW_RODFT00, FFTW_RODFT00,
                               FFTW_ESTIMATE | FFTW_UNALIGNED);
    }
  }
  P.eig_n.resize(static_cast<std::size_t>(width) * height);
  for (int l = 0; l < height; ++l)
    for (int k = 0; k < width; ++k)
      P.eig_n[l * width + k] =
          (2.0 * std::cos(pi * k / width) - 2.0) + (2.0 * std::cos(pi * l / height) - 2.0);
  if (P.dst) {
    const int nx = width - 2, ny = height - 2;
    P.eig_d.resize(static_cast<std::size_t>(nx) * ny);
    for (int l = 0; l < ny; ++l)
      for (int k = 0; k < nx; ++k)
        P.eig_d[l * nx + k] = (2.0 * std::cos(pi * (k + 1) / (nx + 1)) - 2.0) +
                              (2.0 * std::cos(pi * (l + 1) / (ny + 1)) - 2.0);
  }
  std::lock_guard lock(planner_mutex());
  return cache.emplace(std::make_pair(width, height), plans).first->second;
}

PoissonSolver::PoissonSolver(int width, int height)
    : width_(width), height_(height), plans_(plans_for(width, height)) {}

PoissonSolver::~PoissonSolver() = default;

Image2D PoissonSolver::solve_neumann(const Image2D& rhs) const {
  auto& P = *plans_;
  const std::size_t n = static_cast<std::size_t>(P.w) * P.h;
  std::vector<double> buf(rhs.data);
  fftw_execute_r2r(P.dct_fwd, buf.data(), buf.data());
  buf[0] = 0.0;
  for (std::size_t i = 1; i < n; ++i) buf[i] /= P.eig_n[i];
  fftw_execute_r2r(P.dct_inv, buf.data(), buf.data());
  const double scale = 1.0 / (4.0 * P.w * P.h);
  Image2D out(P.w, P.h);
  for (std::size_t i = 0; i < n; ++i) out.data[i] = buf[i] * scale;
  return out;
}

Image2D PoissonSolver::solve_dirichlet(const Image2D& rhs) const {
  auto& P = *plans_;
  Image2D out(P.w, P.h);
  if (!P.dst) return out;
  const int nx = P.w - 2, ny = P.h - 2;
  std::vector<double> buf(static_cast<std::size_t>(nx) * ny);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) buf[y * nx + x] = rhs.at(x + 1, y + 1);
  fftw_execute_r2r(P.dst, buf.data(), buf.data());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] /= P.eig_d[i];
  fftw_execute_r2r(P.dst, buf.data(), buf.data());
  const double scale = 1.0 / (4.0 * (nx + 1) * (ny + 1));
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) out.at(x + 1, y + 1) = buf[y * nx + x] * scale;
  return out;
}

Image2D laplacian_neumann(const Image2D& p) {
  Image2D out(p.width, p.height);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      const double c = p.at(x, y);
      const double l = p.at(x > 0 ? x - 1 : x, y);
      const double r = p.at(x < p.width - 1 ? x + 1 : x, y);
      const double d = p.at(x, y > 0 ? y - 1 : y);
      const double u = p.at(x, y < p.height - 1 ? y + 1 : y);
      out.at(x, y) = l + r + d + u - 4.0 * c;
    }
  return out;
}

Image2D laplacian_dirichlet(const Image2D& p) {
  Image2D out(p.width, p.height);
  for (int y = 1; y < p.height - 1; ++y)
    for (int x = 1; x < p.width - 1; ++x)
      out.at(x, y) = p.at(x - 1, y) + p.at(x + 1, y) + p.at(x, y - 1) + p.at(x, y + 1) - 4.0 * p.at(x, y);
  return out;
}

}  // namespace lvseg::reg
