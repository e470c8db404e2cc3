#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "levyctpe/ffpe_kernel.hpp"
#include "levyctpe/rng.hpp"
#include "levyctpe/types.hpp"

namespace levyctpe {

struct SimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// dX = b dt + Sigma dW + sigma dL, with L a symmetric (2 alpha)-stable
// process.  Fields must be 2 pi periodic; sigma_levy nonnegative.
struct SdeSpec {
  std::function<Scalar(Scalar)> b;
  std::function<Scalar(Scalar)> sigma_brownian;
  std::function<Scalar(Scalar)> sigma_levy;
  Scalar alpha = 0.5;

  Scalar d_o(Scalar x) const {
    Scalar s = sigma_brownian(x);
    return 0.5 * s * s;
  }
  Scalar d_f(Scalar x) const {
    Scalar s = std::abs(sigma_levy(x));
    Scalar v = std::pow(s, 2.0 * alpha);
    return v < kDfFloor ? kDfFloor : v;
  }
  // spot-checks periodicity and sign conventions on a fixed grid
  void validate() const;
};

struct Trajectory {
  std::int64_t traj_id = 0;
  Vector times;
  Vector states;
};

enum class GeneratorKind { unbiased, filtered, mcmc };

struct CensoringParams {
  Scalar trt = 0.0;
  Scalar ct = 0.0;
  Scalar drop_fraction = 0.0;
  std::int64_t burn_in = 0;
};

struct DatasetMeta {
  Scalar alpha = 0.0;
  Scalar dt = 0.0;
  GeneratorKind generator = GeneratorKind::unbiased;
  std::uint64_t seed = 0;
  std::uint64_t derived_seed = 0;  // censoring stream (filtered datasets)
  CensoringParams censoring;
};

// Either whole trajectories (unbiased, mcmc) or bare transition pairs
// (censored data keeps no chain structure).
struct TrajectoryDataset {
  std::vector<Trajectory> trajectories;
  std::vector<TransitionPair> pairs;
  DatasetMeta meta;

  bool is_pairs() const { return trajectories.empty() && !pairs.empty(); }
  std::vector<TransitionPair> all_pairs() const;
};

// Chambers-Mallows-Stuck draw of a standard symmetric stable variate of
// index a = 2 alpha (characteristic function exp(-|xi|^{2 alpha})).
Scalar sample_standard_stable(Scalar alpha, Scalar u, Scalar e);
Scalar sample_standard_stable(Scalar alpha, Rng& rng);  // draws u then e

using InitSampler = std::function<Scalar(Rng&)>;
InitSampler uniform_init();  // uniform on (0, 2 pi]

// Euler-Maruyama with `substeps` internal steps per recorded interval.
Trajectory simulate_trajectory(const SdeSpec& spec, Scalar x0, Scalar dt,
                               Index steps, Index substeps, Rng& rng);

TrajectoryDataset generate_unbiased_dataset(const SdeSpec& spec,
                                            const InitSampler& init,
                                            Index num_traj, Index steps,
                                            Scalar dt, std::uint64_t seed,
                                            Index substeps = 10);

// Removes pairs with |dx - median| >= trt, then uniformly drops
// drop_fraction of the remaining pairs with |dx - median| > ct.
TrajectoryDataset censor_by_filtering(const TrajectoryDataset& input,
                                      Scalar trt, Scalar ct,
                                      Scalar drop_fraction,
                                      std::uint64_t seed);

// Each recorded step is the state of a random-walk Metropolis-Hastings
// chain targeting the one-step transition density (coefficients frozen at
// the current state) after `burn_in` accepted moves.
TrajectoryDataset generate_mcmc_dataset(const SdeSpec& spec,
                                        const InitSampler& init,
                                        Index num_traj, Index steps,
                                        Scalar dt, Index burn_in,
                                        std::uint64_t seed,
                                        const QuadratureTables& tables);

}  // namespace levyctpe
