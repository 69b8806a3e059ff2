#pragma once

#include "lvseg/field.hpp"
#include "lvseg/slicer.hpp"

namespace lvseg::reg {

/// Classical (Thirion) demons: the force is the intensity difference times the
/// fixed-image gradient, normalized by |grad f|^2 + diff^2; the accumulated
/// field is Gaussian-smoothed after every iteration. The monitor and rotation
/// channels are filled from the final Jacobian and curl for inspection only.
DeformationField2D register_demons(const Image2D& fixed, const Image2D& moving, int iters = 50,
                                   double sigma = 5.0);

DeformationField2D register_demons(const slicer::Slice2D& fixed, const slicer::Slice2D& moving,
                                   int iters = 50, double sigma = 5.0);

}  // namespace lvseg::reg
