#pragma once

#include <memory>

#include "lvseg/image.hpp"

namespace lvseg::reg {

/// Spectral solvers for the 5-point Laplacian on a node grid.
///  - Neumann (mirror ghosts, DCT-II basis): pseudo-inverse, mean-free output.
///  - Dirichlet (zero boundary nodes, DST-I basis on the interior).
/// Both inverses are symmetric operators, so they are their own adjoints.
class PoissonSolver {
 public:
  PoissonSolver(int width, int height);
  ~PoissonSolver();
  PoissonSolver(const PoissonSolver&) = delete;
  PoissonSolver& operator=(const PoissonSolver&) = delete;

  /// Solves lap(p) = rhs with zero-flux boundaries. rhs must be mean-free;
  /// its mean component is discarded.
  Image2D solve_neumann(const Image2D& rhs) const;

  /// Solves lap(p) = rhs on interior nodes with p = 0 on the boundary.
  /// Boundary entries of rhs are ignored.
  Image2D solve_dirichlet(const Image2D& rhs) const;

  int width() const { return width_; }
  int height() const { return height_; }

 private:
  struct Plans;
  static std::shared_ptr<const Plans> plans_for(int width, int height);
  int width_;
  int height_;
  std::shared_ptr<const Plans> plans_;
};

/// 5-point Laplacian with the same boundary conventions (used by tests).
Image2D laplacian_neumann(const Image2D& p);
Image2D laplacian_dirichlet(const Image2D& p);

}  // namespace lvseg::reg
