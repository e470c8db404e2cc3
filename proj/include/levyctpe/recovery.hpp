#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "levyctpe/ffpe_kernel.hpp"
#include "levyctpe/fourier_basis.hpp"
#include "levyctpe/levy_sim.hpp"
#include "levyctpe/theta.hpp"
#include "levyctpe/types.hpp"

namespace levyctpe {

struct RecoveryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SamplePools {
  std::vector<TransitionPair> p_main;  // |dx - mu| < trt
  std::vector<TransitionPair> p_tail;  // subset of p_main with |dx - mu| > ct
  Scalar mu = 0.0;  // median increment (median rate for nonuniform pools)
  Scalar ct = 0.0;  // effective cutting threshold after halving
  Scalar trt = 0.0;
  Scalar r_sample = 0.0;  // |p_tail| / |p_main|
};

// Halves ct until the tail pool holds at least `batch` pairs.
SamplePools build_pools(const TrajectoryDataset& dataset, Scalar ct,
                        Scalar trt, Index batch);

// Variable-step variant: mu is the median of dx/dt and a pair is tail when
// |dx - mu dt| > ct_fn(dt).  The recorded ct is ct_fn at the median dt times
// the halving scale.
SamplePools build_pools_nonuniform(const TrajectoryDataset& dataset,
                                   const std::function<Scalar(Scalar)>& ct_fn,
                                   Scalar trt, Index batch = 100);

struct TcfState {
  Scalar tcf = 0.0;
  Scalar r_theta = 0.0;
  Scalar r_sample = 0.0;
};

// max(0, (r_theta - r_sample) / (1 - r_sample)), clamped below 1.
Scalar tcf_from_ratios(Scalar r_theta, Scalar r_sample);

// Tail correction factor from the constant-coefficient model tail mass:
// quadrature of the transition density over |x - mu| in (ct, ct + 200] plus
// the analytic stable tail beyond.
TcfState compute_tcf(const ThetaMatrix& theta, Scalar dt, Scalar ct,
                     Scalar mu, Scalar r_sample, Scalar alpha,
                     const QuadratureTables& tables);

struct FitConfig {
  Scalar eta = 1e-2;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
  Index step_limit = 40000;
  Index batch = 100;
  Index tcf_warmup = 4000;
  Index ma_window = 20000;
  Scalar fd_mix = 0.0;      // fraction of steps taking finite-difference gradients
  Index fd_components = 0;  // components perturbed per fd step; 0 = all
  bool use_tcf = true;      // false pins tcf = 0 (baseline comparisons)
  void validate() const;
};

struct AdamState {
  Vector m;
  Vector v;
  Index step = 0;
};

// In-place bias-corrected Adam update.  A non-finite gradient is rejected:
// returns false with theta and the step counter untouched.
bool adam_step(Vector& theta, AdamState& state, const Vector& grad,
               Scalar eta, Scalar beta1, Scalar beta2, Scalar eps);

struct FitHistory {
  std::vector<Scalar> tcf;  // value used for the step's pool draw
  std::vector<int> pool;    // 0 = main, 1 = tail
  Matrix theta;             // (3K) x steps_run, one column per iterate
};

struct FitResult {
  ThetaMatrix theta_ma;  // mean of the trailing min(ma_window, steps) iterates
  bool converged = false;
  Index steps_run = 0;
  Scalar final_tcf = 0.0;
  Scalar ct_effective = 0.0;
  FitHistory history;
};

// Robust maximum-likelihood fit of (b, D_o, D_f) over the Fourier basis:
// Adam on minibatch negative log-likelihood gradients, batches drawn from
// the tail pool with probability tcf, moving-average convergence test.
FitResult fit(const TrajectoryDataset& dataset, const FourierBasis& basis,
              Scalar alpha, const FitConfig& config, Scalar ct, Scalar trt,
              std::uint64_t seed, const QuadratureTables& tables);

// theta row l flattened at [l*K, (l+1)*K).
ThetaMatrix unflatten_theta(const Vector& v, Index K);
Vector flatten_theta(const ThetaMatrix& theta);

}  // namespace levyctpe
