#include "levyctpe/levy_sim.hpp"

#include <algorithm>
#include <cmath>

#include "levyctpe/parallel.hpp"

namespace levyctpe {

namespace {

Scalar median_of(std::vector<Scalar> v) {
  if (v.empty()) throw SimError("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void SdeSpec::validate() const {
  if (!b || !sigma_brownian || !sigma_levy)
    throw SimError("SdeSpec: all coefficient fields must be set");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw SimError("SdeSpec: alpha must lie in (0, 1)");
  for (int i = 0; i < 17; ++i) {
    const Scalar x = kTwoPi * (i + 0.31) / 17.0;
    for (auto* f : {&b, &sigma_brownian, &sigma_levy}) {
      const Scalar v0 = (*f)(x);
      const Scalar v1 = (*f)(x + kTwoPi);
      if (!std::isfinite(v0) ||
          std::abs(v1 - v0) > 1e-10 * (1.0 + std::abs(v0)))
        throw SimError("SdeSpec: fields must be finite and 2 pi periodic");
    }
    if (sigma_levy(x) < 0.0)
      throw SimError("SdeSpec: sigma_levy must be nonnegative");
  }
}

std::vector<TransitionPair> TrajectoryDataset::all_pairs() const {
  if (is_pairs()) return pairs;
  std::vector<TransitionPair> out;
  for (const auto& traj : trajectories) {
    for (Index j = 0; j + 1 < traj.times.size(); ++j)
      out.push_back({traj.times[j], traj.states[j], traj.times[j + 1],
                     traj.states[j + 1]});
  }
  return out;
}

Scalar sample_standard_stable(Scalar alpha, Scalar u, Scalar e) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw SimError("sample_standard_stable: alpha must lie in (0, 1)");
  if (!(u > -0.5 * kPi && u < 0.5 * kPi) || !(e > 0.0))
    throw SimError("sample_standard_stable: u in (-pi/2, pi/2), e > 0");
  const Scalar a = 2.0 * alpha;
  if (a == 1.0) return std::tan(u);
  return std::sin(a * u) / std::pow(std::cos(u), 1.0 / a) *
         std::pow(std::cos((1.0 - a) * u) / e, (1.0 - a) / a);
}

Scalar sample_standard_stable(Scalar alpha, Rng& rng) {
  const Scalar u = rng.uniform(-0.5 * kPi, 0.5 * kPi);
  const Scalar e = rng.exponential();
  return sample_standard_stable(alpha, u, e);
}

Trajectory simulate_trajectory(const SdeSpec& spec, Scalar x0, Scalar dt,
                               Index steps, Index substeps, Rng& rng) {
  if (!(dt > 0.0) || steps < 1 || substeps < 1)
    throw SimError("simulate_trajectory: dt > 0, steps >= 1, substeps >= 1");
  const Scalar h = dt / static_cast<Scalar>(substeps);
  const Scalar sqrt_h = std::sqrt(h);
  const Scalar stable_h = std::pow(h, 1.0 / (2.0 * spec.alpha));

  Trajectory traj;
  traj.times.resize(steps + 1);
  traj.states.resize(steps + 1);
  Scalar x = x0;
  traj.times[0] = 0.0;
  traj.states[0] = x;
  for (Index j = 1; j <= steps; ++j) {
    for (Index s = 0; s < substeps; ++s) {
      const Scalar drift = spec.b(x);
      const Scalar sig_b = spec.sigma_brownian(x);
      const Scalar sig_l = spec.sigma_levy(x);
      const Scalar z = rng.normal();
      const Scalar stbl = sample_standard_stable(spec.alpha, rng);
      x += drift * h + sig_b * sqrt_h * z + sig_l * stable_h * stbl;
    }
    traj.times[j] = dt * static_cast<Scalar>(j);
    traj.states[j] = x;
  }
  return traj;
}

InitSampler uniform_init() {
  return [](Rng& rng) { return kTwoPi - rng.uniform(0.0, kTwoPi); };
}

TrajectoryDataset generate_unbiased_dataset(const SdeSpec& spec,
                                            const InitSampler& init,
                                            Index num_traj, Index steps,
                                            Scalar dt, std::uint64_t seed,
                                            Index substeps) {
  spec.validate();
  if (num_traj < 1) throw SimError("generate_unbiased_dataset: num_traj >= 1");

  TrajectoryDataset out;
  out.trajectories.resize(num_traj);
  parallel_for(num_traj, [&](Index i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const Scalar x0 = init(rng);
    out.trajectories[i] = simulate_trajectory(spec, x0, dt, steps, substeps, rng);
    out.trajectories[i].traj_id = i;
  });
  out.meta.alpha = spec.alpha;
  out.meta.dt = dt;
  out.meta.generator = GeneratorKind::unbiased;
  out.meta.seed = seed;
  return out;
}

TrajectoryDataset censor_by_filtering(const TrajectoryDataset& input,
                                      Scalar trt, Scalar ct,
                                      Scalar drop_fraction,
                                      std::uint64_t seed) {
  if (!(trt > ct) || !(ct >= 0.0))
    throw SimError("censor_by_filtering: need trt > ct >= 0");
  if (!(drop_fraction >= 0.0 && drop_fraction <= 1.0))
    throw SimError("censor_by_filtering: drop_fraction in [0, 1]");

  const std::vector<TransitionPair> all = input.all_pairs();
  if (all.empty()) throw SimError("censor_by_filtering: empty dataset");

  std::vector<Scalar> dx(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) dx[i] = all[i].dx();
  const Scalar mu = median_of(dx);

  std::vector<std::size_t> kept;
  std::vector<std::size_t> tail;  // positions within `kept`
  for (std::size_t i = 0; i < all.size(); ++i) {
    const Scalar dev = std::abs(dx[i] - mu);
    if (dev >= trt) continue;
    if (dev > ct) tail.push_back(kept.size());
    kept.push_back(i);
  }

  const std::size_t n_drop = static_cast<std::size_t>(
      std::llround(drop_fraction * static_cast<Scalar>(tail.size())));
  std::vector<char> dropped(kept.size(), 0);
  const std::uint64_t traj_count =
      input.trajectories.empty() ? input.pairs.size()
                                 : input.trajectories.size();
  const std::uint64_t drop_seed = mix_seed(seed, traj_count);
  if (n_drop > 0) {
    Rng rng(drop_seed);
    for (std::size_t k = 0; k < n_drop; ++k) {
      const std::size_t j = k + rng.uniform_index(tail.size() - k);
      std::swap(tail[k], tail[j]);
      dropped[tail[k]] = 1;
    }
  }
  if (!tail.empty() && drop_fraction < 1.0 && n_drop == tail.size())
    throw SimError("censor_by_filtering: tail pool exhausted");

  TrajectoryDataset out;
  out.pairs.reserve(kept.size() - n_drop);
  for (std::size_t k = 0; k < kept.size(); ++k)
    if (!dropped[k]) out.pairs.push_back(all[kept[k]]);
  out.meta = input.meta;
  out.meta.generator = GeneratorKind::filtered;
  out.meta.seed = seed;
  out.meta.derived_seed = drop_seed;
  out.meta.censoring.trt = trt;
  out.meta.censoring.ct = ct;
  out.meta.censoring.drop_fraction = drop_fraction;
  return out;
}

TrajectoryDataset generate_mcmc_dataset(const SdeSpec& spec,
                                        const InitSampler& init,
                                        Index num_traj, Index steps,
                                        Scalar dt, Index burn_in,
                                        std::uint64_t seed,
                                        const QuadratureTables& tables) {
  spec.validate();
  if (num_traj < 1 || steps < 1 || burn_in < 1)
    throw SimError("generate_mcmc_dataset: num_traj, steps, burn_in >= 1");
  if (!(dt > 0.0)) throw SimError("generate_mcmc_dataset: dt > 0");

  TrajectoryDataset out;
  out.trajectories.resize(num_traj);
  parallel_for(num_traj, [&](Index i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    Trajectory traj;
    traj.traj_id = i;
    traj.times.resize(steps + 1);
    traj.states.resize(steps + 1);
    Scalar x = init(rng);
    traj.times[0] = 0.0;
    traj.states[0] = x;
    const Index max_proposals = 200 * burn_in;
    for (Index j = 1; j <= steps; ++j) {
      const Scalar b0 = spec.b(x);
      const Scalar do0 = spec.d_o(x);
      const Scalar df0 = spec.d_f(x);
      DensityWorkspace ws(tables, spec.alpha, dt, do0, df0);
      const Scalar mean = x + b0 * dt;
      auto log_target = [&](Scalar xn) {
        Scalar raw = ws.raw_one(IntegrandKind::density, std::abs(xn - mean));
        return std::log(std::max(raw, kPi * kDensityFloor));
      };
      const Scalar prop_std = 3.0 * std::sqrt(2.0 * do0 * dt + 1e-4);
      Scalar chain = mean;
      Scalar lp = log_target(chain);
      Index accepted = 0;
      Index proposals = 0;
      while (accepted < burn_in) {
        if (++proposals > max_proposals)
          throw SimError("generate_mcmc_dataset: chain failed to mix");
        const Scalar cand = chain + prop_std * rng.normal();
        const Scalar lp_cand = log_target(cand);
        if (std::log(rng.uniform01()) < lp_cand - lp) {
          chain = cand;
          lp = lp_cand;
          ++accepted;
        }
      }
      x = chain;
      traj.times[j] = dt * static_cast<Scalar>(j);
      traj.states[j] = x;
    }
    out.trajectories[i] = std::move(traj);
  });
  out.meta.alpha = spec.alpha;
  out.meta.dt = dt;
  out.meta.generator = GeneratorKind::mcmc;
  out.meta.seed = seed;
  out.meta.censoring.burn_in = burn_in;
  return out;
}

}  // namespace levyctpe
