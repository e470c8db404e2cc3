#pragma once

#include <array>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "levyctpe/types.hpp"

namespace levyctpe {

struct QuadratureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------- generic adaptive Gauss-Kronrod ----------------

struct AdaptiveResult {
  Scalar value = 0.0;
  Scalar error = 0.0;  // accumulated error estimate
  bool converged = false;
};

// Globally adaptive G7-K15 on [a, b]; splits the worst panel until the
// summed error estimate meets max(abs_tol, rel_tol*|I|) or the panel
// budget runs out.
AdaptiveResult adaptive_integrate(const std::function<Scalar(Scalar)>& f,
                                  Scalar a, Scalar b, Scalar abs_tol,
                                  Scalar rel_tol, int max_panels = 200000);

// ---------------- fixed rules ----------------

struct GaussRule {
  Array nodes, weights;  // on [0, 1], nodes ascending
};

// n-point Gauss-Legendre rule mapped to [0,1]
GaussRule gauss_legendre01(int n);

// shifted Legendre polynomial P_n(2z - 1), n <= 15
Scalar shifted_legendre(int n, Scalar z);

// Order K of the truncated-Taylor branch; -1 selects the moment-matched
// weight branch (tau > 1).  Brackets are half-open:
//   tau <= 1e-3 -> 4, (1e-3,1e-2] -> 6, (1e-2,1e-1] -> 9, (1e-1,1] -> 17.
int taylor_order(Scalar tau);

// ---------------- shared tables ----------------

class QuadratureTables {
 public:
  QuadratureTables();
  QuadratureTables(const QuadratureTables&) = delete;
  QuadratureTables& operator=(const QuadratureTables&) = delete;

  // 16-point Gauss-Legendre nodes on [0,1]
  const GaussRule& gauss16() const { return gauss16_; }

  // Nodes of the moment-matched rule for the tau > 1 branch.  32 points:
  // a 16-point interpolatory rule is only degree-15 exact, which cannot
  // reach 1e-8 relative accuracy once the oscillation frequency passes
  // ~6; 32 nodes restore parity with the degree-31 Gauss-Jacobi branch.
  static constexpr int kMomentNodes = 32;
  const GaussRule& moment_nodes() const { return gauss32_; }

  // Moment-matched weights at the moment_nodes().  "plain" integrates
  // against exp(-z^{2a} tau), "frac" against z^{2a} exp(-z^{2a} tau)
  // (the extra radial power of the d_f gradient integrand).  LRU-cached
  // on the exact bit patterns of (alpha, tau).
  struct SingularWeights {
    std::array<Scalar, kMomentNodes> plain, frac;
  };
  SingularWeights singular_weights(Scalar alpha, Scalar tau) const;

  // 16-point Gauss-Jacobi rule on [0,1] with weight z^{2 alpha kappa},
  // kappa = 0..18 (the frac integrand shifts kappa by one)
  const GaussRule& jacobi_rule(Scalar alpha, int kappa) const;

  // ---- tail panels ----
  // Composite 8-point Gauss-Legendre on panels of width 1/4 over
  // [1, 5120]; level l truncates at M = 80 * 2^l and carries its own
  // window factor.
  static constexpr int kTailLevels = 7;
  static constexpr Scalar kTailBaseM = 80.0;
  static constexpr Scalar kTailEps = 1e-14;

  struct TailGrid {
    Array z, z2;                            // nodes and their squares
    std::array<Array, kTailLevels> w;       // gl weight * window, per level
    std::array<Index, kTailLevels> len;     // prefix length per level
  };
  const TailGrid& tail_grid() const { return tail_; }

  // z^{2 alpha} over the full node array, cached per alpha
  std::shared_ptr<const Array> tail_z2a(Scalar alpha) const;

 private:
  struct JacobiKey {
    std::uint64_t alpha_bits;
    int kappa;
    bool operator<(const JacobiKey& o) const {
      return alpha_bits != o.alpha_bits ? alpha_bits < o.alpha_bits
                                        : kappa < o.kappa;
    }
  };

  GaussRule gauss16_;
  GaussRule gauss32_;
  Matrix legendre_at_nodes_;  // row n = P_n(2 x_j - 1) at the moment nodes
  TailGrid tail_;

  mutable std::mutex cache_mutex_;
  using WeightKey = std::pair<std::uint64_t, std::uint64_t>;
  struct WeightEntry {
    SingularWeights w;
    std::list<WeightKey>::iterator lru_pos;
  };
  struct KeyHash {
    std::size_t operator()(const WeightKey& k) const {
      std::uint64_t h = k.first * 0x9e3779b97f4a7c15ull ^ k.second;
      h ^= h >> 29;
      return static_cast<std::size_t>(h);
    }
  };
  mutable std::unordered_map<WeightKey, WeightEntry, KeyHash> weight_cache_;
  mutable std::list<WeightKey> weight_lru_;
  static constexpr std::size_t kWeightCacheCap = 100000;

  mutable std::mutex jacobi_mutex_;
  mutable std::map<JacobiKey, std::unique_ptr<GaussRule>> jacobi_cache_;

  mutable std::mutex z2a_mutex_;
  mutable std::map<std::uint64_t, std::shared_ptr<const Array>> z2a_cache_;
};

// C-infinity cutoff: 1 for s <= 0, exp(-2 exp(-1/s^2)/(1-s)^2) inside,
// 0 for s >= 1, with s = 2|z|/m - 1.
Scalar tail_window(Scalar z, Scalar m);

// integral of f(z) exp(-z^{2a} tau) over [0, 1]; f smooth
Scalar integrate_singular(const std::function<Scalar(Scalar)>& f, Scalar alpha,
                          Scalar tau, const QuadratureTables& tables);

struct TailResult {
  Scalar value = 0.0;
  bool converged = false;
};

// integral of f(z) exp(-z^{2a} tau) over [1, inf) by windowed truncation
// with doubling M; converged=false reports the residual-flag condition.
TailResult integrate_tail(const std::function<Scalar(Scalar)>& f, Scalar alpha,
                          Scalar tau, const QuadratureTables& tables);

}  // namespace levyctpe
