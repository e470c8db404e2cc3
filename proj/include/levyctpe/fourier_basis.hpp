#pragma once

#include <cmath>
#include <stdexcept>

#include "levyctpe/types.hpp"

namespace levyctpe {

// Real trigonometric feature map on [0, 2*pi):
//   phi_1 = 1, phi_{2m} = cos(m x), phi_{2m+1} = sin(m x),  m = 1..n_modes.
struct FourierBasis {
  int n_modes = 0;

  FourierBasis() = default;
  explicit FourierBasis(int modes) : n_modes(modes) {
    if (modes < 0) throw std::invalid_argument("FourierBasis: n_modes < 0");
  }

  int size() const { return 2 * n_modes + 1; }

  void eval(Scalar x, Vector& phi) const {
    phi.resize(size());
    phi[0] = 1.0;
    for (int m = 1; m <= n_modes; ++m) {
      phi[2 * m - 1] = std::cos(m * x);
      phi[2 * m] = std::sin(m * x);
    }
  }

  Vector eval(Scalar x) const {
    Vector phi;
    eval(x, phi);
    return phi;
  }
};

}  // namespace levyctpe
