#pragma once

#include <Eigen/Dense>

namespace levyctpe {

using Scalar = double;
using Vector = Eigen::VectorXd;
using Array = Eigen::ArrayXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr Scalar kPi = 3.141592653589793238462643383279502884;
inline constexpr Scalar kTwoPi = 2.0 * kPi;

// Floor applied to the fractional diffusion coefficient wherever a basis
// expansion could drive it nonpositive.
inline constexpr Scalar kDfFloor = 1e-8;

// Densities are clamped here before taking logarithms.
inline constexpr Scalar kDensityFloor = 1e-300;

}  // namespace levyctpe
