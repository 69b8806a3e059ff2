#include "lvseg/registration.hpp"

#include <algorithm>
#include <deque>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <utility>

#include "lvseg/errors.hpp"
#include "lvseg/poisson.hpp"

namespace lvseg::reg {

void RegistrationConfig::validate() const {
  if (pyramid_levels < 1) throw ValidationError("config.pyramid_levels", "pyramid_levels must be >= 1");
  if (max_iters_per_level < 0) throw ValidationError("config.max_iters", "max_iters_per_level must be >= 0");
  if (!(mu_min > 0.0 && mu_min < 1.0 && mu_max > 1.0))
    throw ValidationError("config.mu_bounds", "need 0 < mu_min < 1 < mu_max");
  if (flow_steps < 1) throw ValidationError("config.flow_steps", "flow_steps must be >= 1");
  if (!(regularization >= 0.0)) throw ValidationError("config.regularization", "regularization must be >= 0");
  if (!(step_tol >= 0.0)) throw ValidationError("config.step_tol", "step_tol must be >= 0");
}

nlohmann::json config_to_json(const RegistrationConfig& c) {
  return {{"pyramid_levels", c.pyramid_levels},
          {"max_iters_per_level", c.max_iters_per_level},
          {"similarity", c.similarity == Similarity::SSD ? "SSD" : "NCC"},
          {"step_tol", c.step_tol},
          {"smoothing_sigma", c.smoothing_sigma},
          {"image_sigma", c.image_sigma},
          {"mu_bounds", {c.mu_min, c.mu_max}},
          {"flow_steps", c.flow_steps},
          {"regularization", c.regularization}};
}

RegistrationConfig config_from_json(const nlohmann::json& j) {
  RegistrationConfig c;
  try {
    c.pyramid_levels = j.value("pyramid_levels", c.pyramid_levels);
    c.max_iters_per_level = j.value("max_iters_per_level", c.max_iters_per_level);
    const std::string sim = j.value("similarity", std::string("SSD"));
    if (sim == "SSD") c.similarity = Similarity::SSD;
    else if (sim == "NCC") c.similarity = Similarity::NCC;
    else throw ValidationError("config.similarity", "similarity must be SSD or NCC");
    c.step_tol = j.value("step_tol", c.step_tol);
    c.smoothing_sigma = j.value("smoothing_sigma", c.smoothing_sigma);
    c.image_sigma = j.value("image_sigma", c.image_sigma);
    if (j.contains("mu_bounds")) {
      c.mu_min = j.at("mu_bounds").at(0).get<double>();
      c.mu_max = j.at("mu_bounds").at(1).get<double>();
    }
    c.flow_steps = j.value("flow_steps", c.flow_steps);
    c.regularization = j.value("regularization", c.regularization);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config.schema", e.what());
  }
  c.validate();
  return c;
}

namespace {

const PoissonSolver& solver_for(int w, int h) {
  thread_local std::map<std::pair<int, int>, std::unique_ptr<PoissonSolver>> cache;
  auto& slot = cache[{w, h}];
  if (!slot) slot = std::make_unique<PoissonSolver>(w, h);
  return *slot;
}

struct Cell {
  int i0, j0;
  double fx, fy;
};

inline Cell locate(double x, double y, int w, int h) {
  Cell c;
  c.i0 = std::min(static_cast<int>(x), w - 2);
  c.j0 = std::min(static_cast<int>(y), h - 2);
  c.fx = x - c.i0;
  c.fy = y - c.j0;
  return c;
}

// Velocity from potentials: w = grad p + rot psi, zero normal flow on the boundary.
void assemble_velocity(const Image2D& p, const Image2D& psi, Image2D& wx, Image2D& wy) {
  const int w = p.width, h = p.height;
  wx = Image2D(w, h);
  wy = Image2D(w, h);
  for (int y = 0; y < h; ++y) {
    const bool by = y == 0 || y == h - 1;
    for (int x = 0; x < w; ++x) {
      const bool bx = x == 0 || x == w - 1;
      double vx = 0.0, vy = 0.0;
      if (!bx) vx += 0.5 * (p.at(x + 1, y) - p.at(x - 1, y));
      if (!by) vy += 0.5 * (p.at(x, y + 1) - p.at(x, y - 1));
      if (!bx && !by) {
        vx += 0.5 * (psi.at(x, y + 1) - psi.at(x, y - 1));
        vy -= 0.5 * (psi.at(x + 1, y) - psi.at(x - 1, y));
      }
      wx.at(x, y) = vx;
      wy.at(x, y) = vy;
    }
  }
}

void velocity_adjoint(const Image2D& ax, const Image2D& ay, Image2D& dp, Image2D& dpsi) {
  const int w = ax.width, h = ax.height;
  dp = Image2D(w, h);
  dpsi = Image2D(w, h);
  for (int y = 0; y < h; ++y) {
    const bool by = y == 0 || y == h - 1;
    for (int x = 0; x < w; ++x) {
      const bool bx = x == 0 || x == w - 1;
      const double gx = ax.at(x, y), gy = ay.at(x, y);
      if (!bx) {
        dp.at(x + 1, y) += 0.5 * gx;
        dp.at(x - 1, y) -= 0.5 * gx;
      }
      if (!by) {
        dp.at(x, y + 1) += 0.5 * gy;
        dp.at(x, y - 1) -= 0.5 * gy;
      }
      if (!bx && !by) {
        dpsi.at(x, y + 1) += 0.5 * gx;
        dpsi.at(x, y - 1) -= 0.5 * gx;
        dpsi.at(x + 1, y) -= 0.5 * gy;
        dpsi.at(x - 1, y) += 0.5 * gy;
      }
    }
  }
}

/// Forward map (parameters -> node trajectories) and its reverse-mode adjoint.
class MovingMeshModel {
 public:
  MovingMeshModel(int w, int h, int min_steps) : w_(w), h_(h), min_steps_(min_steps) {}

  void build(const MovingMeshParams& params) {
    const std::size_t n = static_cast<std::size_t>(w_) * h_;
    mean_mu_ = std::accumulate(params.monitor.data.begin(), params.monitor.data.end(), 0.0) / n;
    mu_hat_ = Image2D(w_, h_);
    Image2D rhs(w_, h_);
    for (std::size_t i = 0; i < n; ++i) {
      mu_hat_.data[i] = params.monitor.data[i] / mean_mu_;
      rhs.data[i] = mu_hat_.data[i] - 1.0;
    }
    const auto& solver = solver_for(w_, h_);
    const Image2D p = solver.solve_neumann(rhs);
    Image2D psi = solver.solve_dirichlet(params.rotation);
    for (double& v : psi.data) v = -v;
    assemble_velocity(p, psi, wx_, wy_);

    // Enough Euler steps that no node moves more than kMaxStepPx per step.
    double speed = 0.0, mu_floor = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      speed = std::max(speed, std::hypot(wx_.data[i], wy_.data[i]));
      mu_floor = std::min(mu_floor, mu_hat_.data[i]);
    }
    steps_ = std::clamp(static_cast<int>(std::ceil(speed / mu_floor / kMaxStepPx)), min_steps_, kMaxSteps);

    traj_.assign((steps_ + 1) * n * 2, 0.0);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w_ + x;
        traj_[2 * i] = x;
        traj_[2 * i + 1] = y;
      }
    const double dt = 1.0 / steps_;
    const double xmax = w_ - 1, ymax = h_ - 1;
    for (int k = 0; k < steps_; ++k) {
      const double t = k * dt;
      const double* cur = &traj_[k * n * 2];
      double* next = &traj_[(k + 1) * n * 2];
      for (std::size_t i = 0; i < n; ++i) {
        const double x = cur[2 * i], y = cur[2 * i + 1];
        const Cell c = locate(x, y, w_, h_);
        double W[2], M;
        interp(c, W, M);
        const double R = (1.0 - t) * M + t;
        next[2 * i] = std::clamp(x + dt * W[0] / R, 0.0, xmax);
        next[2 * i + 1] = std::clamp(y + dt * W[1] / R, 0.0, ymax);
      }
    }
  }

  double phi_x(std::size_t i) const { return traj_[(steps_ * static_cast<std::size_t>(w_) * h_ + i) * 2]; }
  double phi_y(std::size_t i) const { return traj_[(steps_ * static_cast<std::size_t>(w_) * h_ + i) * 2 + 1]; }
  const Image2D& mu_hat() const { return mu_hat_; }

  /// Given dE/dphi per node, returns dE/d(monitor, rotation). Optional direct
  /// terms dE/d(normalized monitor) and dE/d(rotation) are added on the way.
  void backward(std::vector<double> lam, MovingMeshParams& grad, const Image2D* direct_mu_hat = nullptr,
                const Image2D* direct_rotation = nullptr) const {
    const std::size_t n = static_cast<std::size_t>(w_) * h_;
    Image2D acc_wx(w_, h_), acc_wy(w_, h_), acc_mu(w_, h_);
    const double dt = 1.0 / steps_;
    for (int k = steps_ - 1; k >= 0; --k) {
      const double t = k * dt;
      const double* cur = &traj_[k * n * 2];
      for (std::size_t i = 0; i < n; ++i) {
        const Cell c = locate(cur[2 * i], cur[2 * i + 1], w_, h_);
        double W[2], M, dW[2][2], dM[2];
        interp_grad(c, W, M, dW, dM);
        const double R = (1.0 - t) * M + t;
        const double lx = lam[2 * i], ly = lam[2 * i + 1];
        const double cwx = dt * lx / R;
        const double cwy = dt * ly / R;
        const double cm = -dt * (1.0 - t) * (lx * W[0] + ly * W[1]) / (R * R);
        scatter(c, acc_wx, cwx);
        scatter(c, acc_wy, cwy);
        scatter(c, acc_mu, cm);
        // dv_a/dx_b = dW_a/dx_b / R - W_a (1 - t) dM/dx_b / R^2
        double J[2][2];
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) J[a][b] = dW[a][b] / R - W[a] * (1.0 - t) * dM[b] / (R * R);
        lam[2 * i] = lx + dt * (lx * J[0][0] + ly * J[1][0]);
        lam[2 * i + 1] = ly + dt * (lx * J[0][1] + ly * J[1][1]);
      }
    }
    Image2D dp, dpsi;
    velocity_adjoint(acc_wx, acc_wy, dp, dpsi);
    const auto& solver = solver_for(w_, h_);
    const Image2D dr = solver.solve_neumann(dp);
    Image2D dgamma = solver.solve_dirichlet(dpsi);
    for (double& v : dgamma.data) v = -v;

    double inner = 0.0;
    std::vector<double> g_hat(n);
    for (std::size_t i = 0; i < n; ++i) {
      g_hat[i] = dr.data[i] + acc_mu.data[i] + (direct_mu_hat ? direct_mu_hat->data[i] : 0.0);
      inner += g_hat[i] * mu_hat_.data[i];
    }
    inner /= n;
    grad.monitor = Image2D(w_, h_);
    for (std::size_t i = 0; i < n; ++i) grad.monitor.data[i] = (g_hat[i] - inner) / mean_mu_;
    if (direct_rotation)
      for (std::size_t i = 0; i < n; ++i) dgamma.data[i] += direct_rotation->data[i];
    grad.rotation = std::move(dgamma);
  }

 private:
  void interp(const Cell& c, double W[2], double& M) const {
    const double a = (1 - c.fx) * (1 - c.fy), b = c.fx * (1 - c.fy), d = (1 - c.fx) * c.fy, e = c.fx * c.fy;
    const std::size_t i00 = static_cast<std::size_t>(c.j0) * w_ + c.i0;
    const std::size_t i10 = i00 + 1, i01 = i00 + w_, i11 = i01 + 1;
    W[0] = a * wx_.data[i00] + b * wx_.data[i10] + d * wx_.data[i01] + e * wx_.data[i11];
    W[1] = a * wy_.data[i00] + b * wy_.data[i10] + d * wy_.data[i01] + e * wy_.data[i11];
    M = a * mu_hat_.data[i00] + b * mu_hat_.data[i10] + d * mu_hat_.data[i01] + e * mu_hat_.data[i11];
  }

  void interp_grad(const Cell& c, double W[2], double& M, double dW[2][2], double dM[2]) const {
    interp(c, W, M);
    const std::size_t i00 = static_cast<std::size_t>(c.j0) * w_ + c.i0;
    const std::size_t i10 = i00 + 1, i01 = i00 + w_, i11 = i01 + 1;
    auto grad = [&](const Image2D& f, double& gx, double& gy) {
      gx = (1 - c.fy) * (f.data[i10] - f.data[i00]) + c.fy * (f.data[i11] - f.data[i01]);
      gy = (1 - c.fx) * (f.data[i01] - f.data[i00]) + c.fx * (f.data[i11] - f.data[i10]);
    };
    grad(wx_, dW[0][0], dW[0][1]);
    grad(wy_, dW[1][0], dW[1][1]);
    grad(mu_hat_, dM[0], dM[1]);
  }

  void scatter(const Cell& c, Image2D& acc, double v) const {
    const std::size_t i00 = static_cast<std::size_t>(c.j0) * w_ + c.i0;
    acc.data[i00] += (1 - c.fx) * (1 - c.fy) * v;
    acc.data[i00 + 1] += c.fx * (1 - c.fy) * v;
    acc.data[i00 + w_] += (1 - c.fx) * c.fy * v;
    acc.data[i00 + w_ + 1] += c.fx * c.fy * v;
  }

  static constexpr double kMaxStepPx = 0.5;
  static constexpr int kMaxSteps = 64;
  int w_, h_, min_steps_, steps_ = 1;
  double mean_mu_ = 1.0;
  Image2D mu_hat_, wx_, wy_;
  std::vector<double> traj_;
};

/// Objective evaluation that keeps enough state for a later gradient call.
/// Total objective = similarity + weight * mean((mu_hat - 1)^2 + rotation^2).
class Evaluator {
 public:
  Evaluator(const Image2D& fixed, const Image2D& moving, Similarity sim, int steps, double reg_weight)
      : fixed_(fixed), moving_(moving), sim_(sim), reg_weight_(reg_weight),
        model_(fixed.width, fixed.height, steps) {}

  double evaluate(const MovingMeshParams& params) {
    model_.build(params);
    const std::size_t n = fixed_.size();
    warped_.resize(n);
    gradx_.resize(n);
    grady_.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      warped_[i] = sample_bilinear_grad(moving_, model_.phi_x(i), model_.phi_y(i), gradx_[i], grady_[i]);
    sim_value_ = similarity(&dwarped_);
    penalty_ = 0.0;
    if (reg_weight_ > 0.0) {
      const Image2D& mh = model_.mu_hat();
      rot_ = params.rotation;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = mh.data[i] - 1.0;
        penalty_ += d * d + rot_.data[i] * rot_.data[i];
      }
      penalty_ *= reg_weight_ / n;
    }
    return sim_value_ + penalty_;
  }

  double similarity_value() const { return sim_value_; }

  void gradient(MovingMeshParams& grad) const {
    const std::size_t n = fixed_.size();
    std::vector<double> lam(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      lam[2 * i] = dwarped_[i] * gradx_[i];
      lam[2 * i + 1] = dwarped_[i] * grady_[i];
    }
    if (reg_weight_ <= 0.0) {
      model_.backward(std::move(lam), grad);
      return;
    }
    Image2D dmu(fixed_.width, fixed_.height), drot(fixed_.width, fixed_.height);
    const double c = 2.0 * reg_weight_ / n;
    for (std::size_t i = 0; i < n; ++i) {
      dmu.data[i] = c * (model_.mu_hat().data[i] - 1.0);
      drot.data[i] = c * rot_.data[i];
    }
    model_.backward(std::move(lam), grad, &dmu, &drot);
  }

  DeformationField2D field(const MovingMeshParams& params) const {
    auto f = DeformationField2D::identity(fixed_.width, fixed_.height);
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * f.width + x;
        f.ux.data[i] = model_.phi_x(i) - x;
        f.uy.data[i] = model_.phi_y(i) - y;
      }
    f.monitor = model_.mu_hat();
    f.rotation = params.rotation;
    return f;
  }

 private:
  double similarity(std::vector<double>* dE) {
    const std::size_t n = fixed_.size();
    dE->assign(n, 0.0);
    if (sim_ == Similarity::SSD) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = warped_[i] - fixed_.data[i];
        s += r * r;
        (*dE)[i] = 2.0 * r / n;
      }
      return s / n;
    }
    double mf = 0.0, mw = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mf += fixed_.data[i];
      mw += warped_[i];
    }
    mf /= n;
    mw /= n;
    double sfw = 0.0, sff = 0.0, sww = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = fixed_.data[i] - mf, b = warped_[i] - mw;
      sfw += a * b;
      sff += a * a;
      sww += b * b;
    }
    if (sff <= 0.0 || sww <= 0.0) return 1.0;
    const double denom = std::sqrt(sff * sww);
    const double ncc = sfw / denom;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = fixed_.data[i] - mf, b = warped_[i] - mw;
      (*dE)[i] = -(a / denom - ncc * b / sww);
    }
    return 1.0 - ncc;
  }

  const Image2D& fixed_;
  const Image2D& moving_;
  Similarity sim_;
  double reg_weight_;
  double sim_value_ = 0.0;
  double penalty_ = 0.0;
  Image2D rot_;
  MovingMeshModel model_;
  std::vector<double> warped_, gradx_, grady_, dwarped_;
};

MovingMeshParams project(MovingMeshParams p, double mu_min, double mu_max) {
  for (int pass = 0; pass < 3; ++pass) {
    for (double& v : p.monitor.data) v = std::clamp(v, mu_min, mu_max);
    const double mean = std::accumulate(p.monitor.data.begin(), p.monitor.data.end(), 0.0) / p.monitor.size();
    for (double& v : p.monitor.data) v /= mean;
  }
  return p;
}

struct LevelResult {
  MovingMeshParams params;
  bool converged = false;
  int iterations = 0;
  double initial = 0.0;
  double final = 0.0;
};

// Flat parameter vector helpers: [monitor..., rotation...].
std::vector<double> flatten(const MovingMeshParams& p) {
  std::vector<double> v(p.monitor.data);
  v.insert(v.end(), p.rotation.data.begin(), p.rotation.data.end());
  return v;
}

void unflatten(const std::vector<double>& v, MovingMeshParams& p) {
  const std::size_t n = p.monitor.size();
  std::copy(v.begin(), v.begin() + n, p.monitor.data.begin());
  std::copy(v.begin() + n, v.end(), p.rotation.data.begin());
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Gaussian smoothing applied channel-wise; the metric for the descent direction.
std::vector<double> smooth(const std::vector<double>& v, int w, int h, double sigma) {
  MovingMeshParams tmp = MovingMeshParams::identity(w, h);
  unflatten(v, tmp);
  tmp.monitor = gaussian_blur(tmp.monitor, sigma);
  tmp.rotation = gaussian_blur(tmp.rotation, sigma);
  return flatten(tmp);
}

struct History {
  std::vector<double> s, y;
  double rho;
};

/// Limited-memory quasi-Newton direction with the smoothing operator as the
/// initial inverse Hessian. Falls back to the smoothed steepest direction.
std::vector<double> descent_direction(const std::vector<double>& g, const std::deque<History>& hist,
                                      int w, int h, double sigma, bool& scaled) {
  std::vector<double> q = g;
  std::vector<double> alpha(hist.size());
  for (std::size_t k = hist.size(); k-- > 0;) {
    alpha[k] = hist[k].rho * dot(hist[k].s, q);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] -= alpha[k] * hist[k].y[i];
  }
  std::vector<double> r = smooth(q, w, h, sigma);
  if (!hist.empty()) {
    const auto& last = hist.back();
    const std::vector<double> sy = smooth(last.y, w, h, sigma);
    const double yhy = dot(last.y, sy);
    const double gamma = yhy > 0.0 ? dot(last.s, last.y) / yhy : 1.0;
    for (double& v : r) v *= gamma;
    for (std::size_t k = 0; k < hist.size(); ++k) {
      const double beta = hist[k].rho * dot(hist[k].y, r);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] += (alpha[k] - beta) * hist[k].s[i];
    }
    scaled = true;
  } else {
    double m = 0.0;
    for (double v : r) m = std::max(m, std::abs(v));
    if (m > 0.0)
      for (double& v : r) v /= m;
    scaled = false;
  }
  for (double& v : r) v = -v;
  return r;
}

double penalty_weight(const RegistrationConfig& cfg, const Image2D& fixed) {
  if (cfg.regularization <= 0.0) return 0.0;
  if (cfg.similarity == Similarity::NCC) return cfg.regularization;
  // SSD scales with image contrast; tie the penalty to the fixed-image variance.
  double m = 0.0, v = 0.0;
  for (double x : fixed.data) m += x;
  m /= fixed.size();
  for (double x : fixed.data) v += (x - m) * (x - m);
  return cfg.regularization * v / fixed.size();
}

LevelResult optimize_level(const Image2D& fixed, const Image2D& moving, MovingMeshParams params,
                           const RegistrationConfig& cfg) {
  constexpr std::size_t kMemory = 6;
  constexpr double kArmijo = 1e-4;
  const int w = fixed.width, h = fixed.height;
  LevelResult out;
  Evaluator ev(fixed, moving, cfg.similarity, cfg.flow_steps, penalty_weight(cfg, fixed));
  double E = ev.evaluate(params);
  double S = ev.similarity_value();
  const double E0 = E;
  out.initial = S;
  std::deque<History> hist;
  MovingMeshParams grad_p;
  ev.gradient(grad_p);
  std::vector<double> x = flatten(params), g = flatten(grad_p);
  double steep_alpha = 0.05;
  int it = 0;
  bool converged = false;
  while (it < cfg.max_iters_per_level) {
    if (E <= 0.0) {
      converged = true;
      break;
    }
    bool scaled = false;
    std::vector<double> d = descent_direction(g, hist, w, h, cfg.smoothing_sigma, scaled);
    double slope = dot(g, d);
    if (!(slope < 0.0) && !hist.empty()) {
      hist.clear();
      d = descent_direction(g, hist, w, h, cfg.smoothing_sigma, scaled);
      slope = dot(g, d);
    }
    if (!(slope < 0.0)) {
      converged = true;
      break;
    }
    double alpha = scaled ? 1.0 : steep_alpha;
    bool accepted = false;
    MovingMeshParams trial = params;
    double E_trial = E;
    while (alpha > 1e-8) {
      std::vector<double> xt(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) xt[i] = x[i] + alpha * d[i];
      unflatten(xt, trial);
      trial = project(std::move(trial), cfg.mu_min, cfg.mu_max);
      E_trial = ev.evaluate(trial);
      if (E_trial < E && E_trial <= E + kArmijo * alpha * slope && ev.similarity_value() <= S &&
          min_interior_jacobian(ev.field(trial)) > 0.0) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    ++it;
    if (!accepted) {
      if (!hist.empty()) {
        // Retry once from the steepest direction before giving up.
        hist.clear();
        ev.evaluate(params);
        continue;
      }
      ev.evaluate(params);
      converged = true;
      break;
    }
    if (!scaled) steep_alpha = std::min(2.0 * alpha, 1.0);
    MovingMeshParams g_new;
    ev.gradient(g_new);
    std::vector<double> x_new = flatten(trial), gn = flatten(g_new);
    History hk;
    hk.s.resize(x.size());
    hk.y.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      hk.s[i] = x_new[i] - x[i];
      hk.y[i] = gn[i] - g[i];
    }
    const double sy = dot(hk.s, hk.y);
    if (sy > 1e-16 * std::sqrt(dot(hk.s, hk.s) * dot(hk.y, hk.y)) && sy > 0.0) {
      hk.rho = 1.0 / sy;
      hist.push_back(std::move(hk));
      if (hist.size() > kMemory) hist.pop_front();
    }
    // Decrease measured against the level's starting objective, so noise-free
    // pairs do not chase E -> 0 indefinitely.
    const double rel = (E - E_trial) / E0;
    params = std::move(trial);
    x = std::move(x_new);
    g = std::move(gn);
    E = E_trial;
    S = ev.similarity_value();
    if (rel < cfg.step_tol) {
      converged = true;
      break;
    }
  }
  out.params = std::move(params);
  out.converged = converged || cfg.max_iters_per_level == 0;
  out.iterations = it;
  out.final = S;
  return out;
}

}  // namespace

DeformationField2D field_from_parameters(const MovingMeshParams& params, int flow_steps) {
  const int w = params.monitor.width, h = params.monitor.height;
  MovingMeshModel model(w, h, flow_steps);
  model.build(params);
  auto f = DeformationField2D::identity(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      f.ux.data[i] = model.phi_x(i) - x;
      f.uy.data[i] = model.phi_y(i) - y;
    }
  f.monitor = model.mu_hat();
  f.rotation = params.rotation;
  return f;
}

double objective(const Image2D& fixed, const Image2D& moving, const MovingMeshParams& params,
                 const RegistrationConfig& cfg, MovingMeshParams* gradient) {
  if (!fixed.same_shape(moving) || !fixed.same_shape(params.monitor) || !fixed.same_shape(params.rotation))
    throw ValidationError("registration.dims", "images and parameters must share a grid");
  Evaluator ev(fixed, moving, cfg.similarity, cfg.flow_steps, penalty_weight(cfg, fixed));
  const double E = ev.evaluate(params);
  if (gradient) ev.gradient(*gradient);
  return E;
}

DeformationField2D register_images(const Image2D& fixed, const Image2D& moving,
                                   const RegistrationConfig& cfg) {
  cfg.validate();
  if (!fixed.same_shape(moving))
    throw ValidationError("registration.dims", "fixed and moving images must share dimensions");
  if (fixed.width < 3 || fixed.height < 3)
    throw ValidationError("registration.dims", "images must be at least 3x3");

  constexpr int kMinLevelSize = 8;
  MovingMeshParams params;
  double initial = -1.0;
  LevelResult last;
  int total_iters = 0;
  for (int level = cfg.pyramid_levels - 1; level >= 0; --level) {
    const double factor = std::ldexp(1.0, level);
    int lw = static_cast<int>(std::lround((fixed.width - 1) / factor)) + 1;
    int lh = static_cast<int>(std::lround((fixed.height - 1) / factor)) + 1;
    if (level > 0 && (lw < kMinLevelSize || lh < kMinLevelSize)) continue;
    lw = level == 0 ? fixed.width : lw;
    lh = level == 0 ? fixed.height : lh;
    const double sigma = cfg.image_sigma * factor;
    Image2D f = gaussian_blur(fixed, sigma);
    Image2D m = gaussian_blur(moving, sigma);
    if (level > 0) {
      f = resample_corner_aligned(f, lw, lh);
      m = resample_corner_aligned(m, lw, lh);
    }
    if (params.monitor.width == 0) {
      params = MovingMeshParams::identity(lw, lh);
    } else {
      params.monitor = resample_corner_aligned(params.monitor, lw, lh);
      params.rotation = resample_corner_aligned(params.rotation, lw, lh);
      params = project(std::move(params), cfg.mu_min, cfg.mu_max);
    }
    // Reported before/after values both refer to the finest level.
    if (level == 0) initial = objective(f, m, MovingMeshParams::identity(lw, lh), cfg);
    last = optimize_level(f, m, std::move(params), cfg);
    total_iters += last.iterations;
    params = last.params;
  }

  DeformationField2D field = field_from_parameters(params, cfg.flow_steps);
  field.converged = last.converged;
  field.iterations = total_iters;
  field.initial_similarity = initial;
  field.final_similarity = last.final;
  return field;
}

DeformationField2D register_slices(const slicer::Slice2D& fixed, const slicer::Slice2D& moving,
                                   const RegistrationConfig& cfg) {
  return register_images(fixed.pixels, moving.pixels, cfg);
}

}  // namespace lvseg::reg
