#pragma once

#include <stdexcept>

#include "levyctpe/fourier_basis.hpp"
#include "levyctpe/types.hpp"

namespace levyctpe {

struct FieldCoefficients {
  Scalar b = 0.0;    // drift
  Scalar d_o = 0.0;  // Brownian diffusion, clamped at 0
  Scalar d_f = 0.0;  // fractional diffusion, clamped at kDfFloor
};

// Rows: drift, Brownian diffusion, fractional diffusion; one column per
// basis feature.
struct ThetaMatrix {
  Eigen::Matrix<Scalar, 3, Eigen::Dynamic> coef;

  ThetaMatrix() = default;
  explicit ThetaMatrix(int n_features) { coef.setZero(3, n_features); }

  int n_features() const { return static_cast<int>(coef.cols()); }

  // raw (unclamped) field value for one row
  Scalar eval_raw(int row, const FourierBasis& basis, Scalar x) const {
    if (basis.size() != n_features())
      throw std::invalid_argument("ThetaMatrix: basis size mismatch");
    Vector phi = basis.eval(x);
    return coef.row(row).dot(phi);
  }
};

inline FieldCoefficients evaluate_coefficients(const ThetaMatrix& theta,
                                               const FourierBasis& basis,
                                               Scalar x) {
  if (basis.size() != theta.n_features())
    throw std::invalid_argument("evaluate_coefficients: basis size mismatch");
  Vector phi = basis.eval(x);
  Eigen::Vector3d v = theta.coef * phi;
  FieldCoefficients c;
  c.b = v[0];
  c.d_o = v[1] < 0.0 ? 0.0 : v[1];
  c.d_f = v[2] < kDfFloor ? kDfFloor : v[2];
  return c;
}

}  // namespace levyctpe
