#pragma once

#include <array>
#include <atomic>
#include <memory>
#include <mutex>
#include <stdexcept>

#include "levyctpe/quadrature.hpp"
#include "levyctpe/rng.hpp"
#include "levyctpe/theta.hpp"

namespace levyctpe {

struct KernelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One transition-density query.  y is the magnitude of the drift-corrected
// displacement |x_next - x_current - b dt|; the radial integrals below are
// even in y, signs are reapplied by the gradient assembly.
struct FfpeQuery {
  Scalar y = 0.0;
  Scalar t = 0.0;
  Scalar d_o = 0.0;   // Sigma^2 / 2
  Scalar d_f = 0.0;   // |sigma_L|^{2 alpha}
  Scalar alpha = 0.5;
  void validate() const;
};

enum class IntegrandKind { density, grad_b, grad_do, grad_df };

// Per-(alpha, t, d_o, d_f) evaluator for the radial integrals
//
//   I_h(y) = int_0^inf z^h osc(y z) exp(-d_o t z^2 - d_f t z^{2 alpha}) dz
//
// with osc = cos for h in {0, 2, 2 alpha}, sin for h in {1, -1}.  The
// singular piece [0,1] is precomputed as fixed nodes/weights (Taylor x
// Gauss-Jacobi when tau <= 1, moment-matched otherwise); the tail [1,inf)
// reuses the shared windowed panels, with envelope weights built lazily
// per truncation level.  If the tail fails to settle, or y > 10, the
// integral is re-expressed at a rescaled workspace and mapped back.
class DensityWorkspace {
 public:
  DensityWorkspace(const QuadratureTables& tables, Scalar alpha, Scalar t,
                   Scalar d_o, Scalar d_f);

  struct Raw {
    std::array<Scalar, 4> v{};  // indexed by IntegrandKind
    bool scaled = false;        // any kind went through the rescaled child
    bool flagged = false;       // some tail never settled, value is best-effort
  };
  Raw raw_all(Scalar y) const;
  Scalar raw_one(IntegrandKind kind, Scalar y, bool* flagged = nullptr) const;

  // P(displacement > w) for the centered law, via the half-inversion
  // integral; valid for any real w, monotone in w up to quadrature noise.
  Scalar upper_tail_mass(Scalar w) const;

  Scalar alpha() const { return alpha_; }
  Scalar t() const { return t_; }
  Scalar d_o() const { return d_o_; }
  Scalar d_f() const { return d_f_; }

 private:
  enum Hk { kH0 = 0, kH1, kH2, kH2a, kHm1, kNumHk };

  void build_singular();
  void ensure_tail_level(int level) const;
  void unscaled(Scalar y, const bool need[kNumHk], Scalar out[kNumHk],
                bool flag[kNumHk]) const;
  void radial(Scalar y, const bool need[kNumHk], Scalar out[kNumHk],
              bool scaled_any[1], bool flag[kNumHk]) const;
  Scalar choose_scale(Scalar y) const;

  const QuadratureTables& tables_;
  Scalar alpha_, t_, d_o_, d_f_;
  Scalar two_a_;  // 2 alpha
  Scalar q_;      // d_o t
  Scalar tau_;    // d_f t

  // singular nodes/weights; weights already carry exp(-q z^2) and, for
  // the Taylor branch, the series coefficient of their kappa block
  Array s_z, s_w;    // plain: kinds h in {0, 1, 2, -1}
  Array sf_z, sf_w;  // z^{2a}-weighted: kind h = 2a

  std::shared_ptr<const Array> z2a_;        // z^{2 alpha} on tail nodes
  Index eff_len_ = 0;                       // node prefix with envelope > e^-60
  mutable std::array<Array, QuadratureTables::kTailLevels> tail_w_;
  mutable std::atomic<int> tail_built_{0};
  mutable std::mutex tail_mutex_;
};

// Single radial integral for one query; convenience wrapper that builds a
// throwaway workspace.
Scalar density_integral(IntegrandKind kind, const FfpeQuery& q,
                        const QuadratureTables& tables);

// Transition density p = I_0(y) / pi, clamped to 1e-300 so logs stay finite.
Scalar transition_density(const FfpeQuery& q, const QuadratureTables& tables);

// Reference evaluation by composite Gauss-Legendre in long double over
// [0, R], R chosen so the envelope is below 1e-20.  Panel widths resolve
// both the oscillation and the envelope; the result is accepted only if a
// half-width pass agrees to rel_tol, else one more refinement, else throws.
Scalar brute_force_density(const FfpeQuery& q, Scalar rel_tol);

// One observed transition of a trajectory.
struct TransitionPair {
  Scalar t_current = 0.0;
  Scalar x_current = 0.0;
  Scalar t_next = 0.0;
  Scalar x_next = 0.0;
  Scalar dt() const { return t_next - t_current; }
  Scalar dx() const { return x_next - x_current; }
};

// Gradient of the negative log-likelihood of one pair w.r.t. the
// coefficient matrix, flattened row-major: [b row, d_o row, d_f row].
// Throws KernelError if the density underflows.
Vector loglik_grad_direct(const TransitionPair& pair, const ThetaMatrix& theta,
                          const FourierBasis& basis, Scalar alpha,
                          const QuadratureTables& tables);

// Same, reusing an externally held workspace.  The caller guarantees ws was
// built with (t, d_o, d_f) = (pair.dt(), coefficients at x_current).
Vector loglik_grad_direct(const TransitionPair& pair, const ThetaMatrix& theta,
                          const FourierBasis& basis,
                          const DensityWorkspace& ws);

// Finite-difference fallback: perturbs at most b_fd randomly chosen
// components by a signed random step (one-sided difference).  Unselected
// components get zero.  step_override > 0 pins the step magnitude.
Vector loglik_grad_fd(const TransitionPair& pair, const ThetaMatrix& theta,
                      const FourierBasis& basis, Scalar alpha,
                      const QuadratureTables& tables, int b_fd, Rng& rng,
                      Scalar step_override = 0.0);

// Series approximation of the one-sided mass P(S > w) for the pure-jump
// law with characteristic exponent c |xi|^{2 alpha}, plus a second-order
// correction for convolution with a N(0, sigma2) component.  Valid for
// w^{2 alpha} >> c.
Scalar stable_tail_series(Scalar c, Scalar alpha, Scalar w,
                          Scalar sigma2 = 0.0);

}  // namespace levyctpe
