#pragma once

#include <json.hpp>

#include "lvseg/field.hpp"
#include "lvseg/image.hpp"
#include "lvseg/slicer.hpp"

namespace lvseg::reg {

enum class Similarity { SSD, NCC };

struct RegistrationConfig {
  int pyramid_levels = 3;         ///< x4, x2, x1 for the default
  int max_iters_per_level = 200;
  Similarity similarity = Similarity::SSD;
  double step_tol = 1e-4;         ///< stop when the relative decrease drops below this
  double smoothing_sigma = 2.0;   ///< Gaussian on parameter gradients, pixels
  double image_sigma = 1.0;       ///< Gaussian pre-smoothing of both images, pixels
  double mu_min = 0.2;
  double mu_max = 5.0;
  int flow_steps = 6;             ///< minimum Euler steps of the deformation flow
  /// Weight of mean((mu_hat - 1)^2 + rotation^2); for SSD it is scaled by the
  /// fixed-image variance.
  double regularization = 1.0;

  void validate() const;
};

nlohmann::json config_to_json(const RegistrationConfig& c);
RegistrationConfig config_from_json(const nlohmann::json& j);

/// Moving-mesh parameters on a node grid: monitor (area change) and curl.
struct MovingMeshParams {
  Image2D monitor;
  Image2D rotation;

  static MovingMeshParams identity(int w, int h) { return {Image2D(w, h, 1.0), Image2D(w, h, 0.0)}; }
};

/// Builds the diffeomorphism encoded by (monitor, rotation).
///
/// The monitor is normalized to mean 1; a velocity potential p and a stream
/// function psi solve
///     lap p = monitor - 1   (zero flux),     lap psi = -rotation  (psi = 0 on the boundary),
/// giving w = grad p + rot psi with zero normal component on the boundary.
/// Nodes are then advected by v_t = w / ((1 - t) * monitor + t) for t in [0, 1],
/// for which det(grad phi) = monitor in the continuum limit. The Euler step
/// count is raised above flow_steps when needed to keep steps under half a pixel.
DeformationField2D field_from_parameters(const MovingMeshParams& params, int flow_steps);

/// Registration objective at a parameter point and (optionally) its exact
/// gradient with respect to the parameters: similarity (SSD = mean squared
/// difference, NCC = 1 - normalized cross-correlation) plus the parameter penalty.
double objective(const Image2D& fixed, const Image2D& moving, const MovingMeshParams& params,
                 const RegistrationConfig& cfg, MovingMeshParams* gradient = nullptr);

/// Coarse-to-fine gradient descent with backtracking line search.
/// Every accepted step keeps min interior det(grad phi) > 0.
DeformationField2D register_images(const Image2D& fixed, const Image2D& moving,
                                   const RegistrationConfig& cfg);

DeformationField2D register_slices(const slicer::Slice2D& fixed, const slicer::Slice2D& moving,
                                   const RegistrationConfig& cfg);

}  // namespace lvseg::reg
