#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "levyctpe/levy_sim.hpp"
#include "levyctpe/quadrature.hpp"

using namespace levyctpe;

namespace {

const QuadratureTables& tables() {
  static QuadratureTables t;
  return t;
}

SdeSpec constant_spec(Scalar b, Scalar d_o, Scalar d_f, Scalar alpha) {
  SdeSpec s;
  s.alpha = alpha;
  s.b = [b](Scalar) { return b; };
  s.sigma_brownian = [d_o](Scalar) { return std::sqrt(2.0 * d_o); };
  const Scalar sig = std::pow(d_f, 1.0 / (2.0 * alpha));
  s.sigma_levy = [sig](Scalar) { return sig; };
  return s;
}

// two-sided Kolmogorov-Smirnov statistic against a cdf
Scalar ks_stat(std::vector<Scalar> x, const std::function<Scalar(Scalar)>& cdf) {
  std::sort(x.begin(), x.end());
  const Scalar n = static_cast<Scalar>(x.size());
  Scalar d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Scalar f = cdf(x[i]);
    d = std::max(d, std::abs(f - static_cast<Scalar>(i + 1) / n));
    d = std::max(d, std::abs(f - static_cast<Scalar>(i) / n));
  }
  return d;
}

std::vector<Scalar> increments(const TrajectoryDataset& ds) {
  std::vector<Scalar> dx;
  for (const auto& p : ds.all_pairs()) dx.push_back(p.dx());
  return dx;
}

}  // namespace

TEST_CASE("stable sampler special values") {
  // index 2 alpha = 1 collapses to tan(u)
  for (Scalar u : {-1.2, -0.3, 0.0, 0.7, 1.5}) {
    CHECK(sample_standard_stable(0.5, u, 1.3) == std::tan(u));
  }
  // the odd part vanishes at u = 0 for every index
  for (Scalar alpha : {0.2, 0.4, 0.8}) {
    CHECK(sample_standard_stable(alpha, 0.0, 0.7) == 0.0);
  }
  CHECK_THROWS_AS(sample_standard_stable(1.0, 0.1, 1.0), SimError);
  CHECK_THROWS_AS(sample_standard_stable(0.5, 2.0, 1.0), SimError);
  CHECK_THROWS_AS(sample_standard_stable(0.5, 0.1, 0.0), SimError);
}

TEST_CASE("stable sampler characteristic function") {
  // E cos(xi S) = exp(-|xi|^{2 alpha}); variance of cos is known in closed
  // form, so a fixed-seed sample mean gets an exact error budget
  const int n = 40000;
  for (Scalar alpha : {0.3, 0.6}) {
    Rng rng(914);
    std::vector<Scalar> s(n);
    for (int i = 0; i < n; ++i) s[i] = sample_standard_stable(alpha, rng);
    for (Scalar xi : {0.5, 1.0, 2.0}) {
      Scalar mean = 0.0;
      for (int i = 0; i < n; ++i) mean += std::cos(xi * s[i]);
      mean /= n;
      const Scalar a2 = 2.0 * alpha;
      const Scalar want = std::exp(-std::pow(xi, a2));
      const Scalar var = 0.5 * (1.0 + std::exp(-std::pow(2.0 * xi, a2))) -
                         want * want;
      CHECK(std::abs(mean - want) <= 3.5 * std::sqrt(var / n));
    }
  }
}

TEST_CASE("spec validation rejects aperiodic or signed fields") {
  SdeSpec s = constant_spec(1.0, 1.0, 1.0, 0.5);
  CHECK_NOTHROW(s.validate());
  s.b = [](Scalar x) { return x; };
  CHECK_THROWS_AS(s.validate(), SimError);
  s = constant_spec(1.0, 1.0, 1.0, 0.5);
  s.sigma_levy = [](Scalar) { return -1.0; };
  CHECK_THROWS_AS(s.validate(), SimError);
  s = constant_spec(0.0, 1.0, 1.0, 0.5);
  s.alpha = 1.0;
  CHECK_THROWS_AS(s.validate(), SimError);
  // periodic but nonconstant is fine
  s = constant_spec(0.0, 1.0, 1.0, 0.5);
  s.b = [](Scalar x) { return std::sin(x); };
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("noise-free integration is exact drift accumulation") {
  SdeSpec s = constant_spec(1.0, 0.0, 0.0, 0.5);
  Rng rng(3);
  Trajectory traj = simulate_trajectory(s, 0.0, 0.1, 10, 7, rng);
  REQUIRE(traj.states.size() == 11);
  for (Index j = 0; j <= 10; ++j) {
    CHECK(traj.times[j] == doctest::Approx(0.1 * j).epsilon(1e-15));
    CHECK(traj.states[j] == doctest::Approx(0.1 * j).epsilon(1e-12));
  }
}

TEST_CASE("dataset shape and determinism") {
  SdeSpec s = constant_spec(5.0, 4.0, 3.0, 0.6);
  auto ds = generate_unbiased_dataset(s, uniform_init(), 3, 4, 0.025, 77);
  REQUIRE(ds.trajectories.size() == 3);
  CHECK(!ds.is_pairs());
  CHECK(ds.all_pairs().size() == 12);
  for (Index i = 0; i < 3; ++i) {
    CHECK(ds.trajectories[i].traj_id == i);
    CHECK(ds.trajectories[i].states.size() == 5);
    CHECK(ds.trajectories[i].states[0] > 0.0);
    CHECK(ds.trajectories[i].states[0] <= kTwoPi);
  }
  CHECK(ds.meta.alpha == 0.6);
  CHECK(ds.meta.dt == 0.025);
  CHECK(ds.meta.generator == GeneratorKind::unbiased);
  CHECK(ds.meta.seed == 77);

  auto again = generate_unbiased_dataset(s, uniform_init(), 3, 4, 0.025, 77);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 5; ++j)
      CHECK(ds.trajectories[i].states[j] == again.trajectories[i].states[j]);

  auto other = generate_unbiased_dataset(s, uniform_init(), 3, 4, 0.025, 78);
  bool differs = false;
  for (Index i = 0; i < 3; ++i)
    for (Index j = 1; j < 5; ++j)
      differs |= ds.trajectories[i].states[j] != other.trajectories[i].states[j];
  CHECK(differs);
}

TEST_CASE("one-step marginals match the driving laws") {
  SUBCASE("brownian part") {
    SdeSpec s = constant_spec(0.0, 1.0, 0.0, 0.5);
    auto ds = generate_unbiased_dataset(s, uniform_init(), 20000, 1, 1.0, 5);
    auto dx = increments(ds);
    const Scalar d = ks_stat(dx, [](Scalar x) {
      return 0.5 * std::erfc(-x / 2.0);  // N(0, 2) cdf
    });
    CHECK(d < 0.014);
  }
  SUBCASE("cauchy part") {
    SdeSpec s;
    s.alpha = 0.5;
    s.b = [](Scalar) { return 0.0; };
    s.sigma_brownian = [](Scalar) { return 0.0; };
    s.sigma_levy = [](Scalar) { return 1.0; };
    auto ds =
        generate_unbiased_dataset(s, uniform_init(), 20000, 1, 1.0, 6, 1);
    auto dx = increments(ds);
    const Scalar d = ks_stat(dx, [](Scalar x) {
      return 0.5 + std::atan(x) / kPi;
    });
    CHECK(d < 0.014);
  }
  SUBCASE("stable part via the empirical characteristic function") {
    SdeSpec s;
    s.alpha = 0.6;
    s.b = [](Scalar) { return 0.0; };
    s.sigma_brownian = [](Scalar) { return 0.0; };
    s.sigma_levy = [](Scalar) { return 1.0; };
    auto ds =
        generate_unbiased_dataset(s, uniform_init(), 20000, 1, 1.0, 7, 1);
    auto dx = increments(ds);
    for (Scalar xi : {0.5, 1.0, 2.0}) {
      Scalar mean = 0.0;
      for (Scalar v : dx) mean += std::cos(xi * v);
      mean /= static_cast<Scalar>(dx.size());
      const Scalar want = std::exp(-std::pow(xi, 1.2));
      const Scalar var =
          0.5 * (1.0 + std::exp(-std::pow(2.0 * xi, 1.2))) - want * want;
      CHECK(std::abs(mean - want) <=
            3.5 * std::sqrt(var / static_cast<Scalar>(dx.size())));
    }
  }
}

namespace {

// one trajectory whose increments are exactly the given values
TrajectoryDataset dataset_from_increments(const std::vector<Scalar>& dx) {
  TrajectoryDataset ds;
  Trajectory traj;
  traj.times.resize(dx.size() + 1);
  traj.states.resize(dx.size() + 1);
  traj.times[0] = 0.0;
  traj.states[0] = 0.0;
  for (std::size_t j = 0; j < dx.size(); ++j) {
    traj.times[j + 1] = 0.025 * static_cast<Scalar>(j + 1);
    traj.states[j + 1] = traj.states[j] + dx[j];
  }
  ds.trajectories.push_back(traj);
  ds.meta.alpha = 0.3;
  ds.meta.dt = 0.025;
  return ds;
}

std::size_t count_tail(const TrajectoryDataset& ds, Scalar mu, Scalar ct) {
  std::size_t n = 0;
  for (const auto& p : ds.all_pairs()) n += std::abs(p.dx() - mu) > ct;
  return n;
}

}  // namespace

TEST_CASE("filtering censors around the median increment") {
  auto ds = dataset_from_increments({0.9, 1.0, 1.1, 9.5});
  // median of {0.9, 1.0, 1.1, 9.5} is 1.05; only 9.5 deviates past ct = 8

  SUBCASE("nothing dropped") {
    auto out = censor_by_filtering(ds, 20.0, 8.0, 0.0, 9);
    CHECK(out.is_pairs());
    REQUIRE(out.pairs.size() == 4);
    CHECK(out.pairs[3].dx() == doctest::Approx(9.5));
    CHECK(out.meta.generator == GeneratorKind::filtered);
    CHECK(out.meta.censoring.trt == 20.0);
    CHECK(out.meta.censoring.ct == 8.0);
    CHECK(out.meta.censoring.drop_fraction == 0.0);
    CHECK(out.meta.derived_seed != 0);
  }
  SUBCASE("the whole tail dropped") {
    auto out = censor_by_filtering(ds, 20.0, 8.0, 1.0, 9);
    REQUIRE(out.pairs.size() == 3);
    for (const auto& p : out.pairs) CHECK(p.dx() < 2.0);
  }
  SUBCASE("removal threshold strikes first") {
    auto out = censor_by_filtering(ds, 5.0, 2.0, 0.0, 9);
    REQUIRE(out.pairs.size() == 3);
    for (const auto& p : out.pairs) CHECK(p.dx() < 2.0);
  }
  SUBCASE("partial drop of a single-pair tail is an error") {
    CHECK_THROWS_AS(censor_by_filtering(ds, 20.0, 8.0, 0.6, 9), SimError);
  }
}

TEST_CASE("filtering with no qualifying jumps is the identity") {
  auto ds = dataset_from_increments({0.9, 1.0, 1.1, 1.0, 0.95});
  auto out = censor_by_filtering(ds, 20.0, 8.0, 0.7, 9);
  const auto in_pairs = ds.all_pairs();
  REQUIRE(out.pairs.size() == in_pairs.size());
  for (std::size_t i = 0; i < in_pairs.size(); ++i) {
    CHECK(out.pairs[i].x_current == in_pairs[i].x_current);
    CHECK(out.pairs[i].x_next == in_pairs[i].x_next);
  }
}

TEST_CASE("drop fraction scales the surviving tail") {
  SdeSpec s = constant_spec(5.0, 4.0, 3.0, 0.3);
  auto ds = generate_unbiased_dataset(s, uniform_init(), 400, 10, 0.025, 21);
  const auto full = censor_by_filtering(ds, 1e9, 8.0, 0.0, 13);
  // the same median the censoring pass computes
  std::vector<Scalar> dx = increments(ds);
  std::sort(dx.begin(), dx.end());
  const Scalar mu = 0.5 * (dx[dx.size() / 2 - 1] + dx[dx.size() / 2]);
  const std::size_t t0 = count_tail(full, mu, 8.0);
  REQUIRE(t0 > 20);

  const auto half = censor_by_filtering(ds, 1e9, 8.0, 0.5, 13);
  const auto none = censor_by_filtering(ds, 1e9, 8.0, 1.0, 13);
  const std::size_t t_half = count_tail(half, mu, 8.0);
  const std::size_t t_none = count_tail(none, mu, 8.0);
  CHECK(t_none == 0);
  CHECK(std::abs(static_cast<long>(t_half) - static_cast<long>(t0 - t0 / 2)) <=
        1);
  CHECK(half.pairs.size() == full.pairs.size() - (t0 - t_half));

  // deterministic in the seed
  const auto again = censor_by_filtering(ds, 1e9, 8.0, 0.5, 13);
  REQUIRE(again.pairs.size() == half.pairs.size());
  for (std::size_t i = 0; i < half.pairs.size(); ++i)
    CHECK(again.pairs[i].x_next == half.pairs[i].x_next);
}

TEST_CASE("mcmc sampling underweights the far jump tail") {
  SdeSpec s = constant_spec(5.0, 4.0, 3.0, 0.3);
  const Index traj = 600, steps = 8;
  auto ds = generate_mcmc_dataset(s, uniform_init(), traj, steps, 0.025, 200,
                                  31, tables());
  REQUIRE(ds.trajectories.size() == traj);
  CHECK(ds.meta.generator == GeneratorKind::mcmc);
  CHECK(ds.meta.censoring.burn_in == 200);

  auto dx = increments(ds);
  std::vector<Scalar> sorted = dx;
  std::sort(sorted.begin(), sorted.end());
  const Scalar mu = 0.5 * (sorted[sorted.size() / 2 - 1] +
                           sorted[sorted.size() / 2]);
  auto frac_beyond = [&](Scalar thr) {
    std::size_t tail = 0;
    for (Scalar v : dx) tail += std::abs(v - mu) > thr;
    return static_cast<Scalar>(tail) / static_cast<Scalar>(dx.size());
  };

  DensityWorkspace ws(tables(), 0.3, 0.025, 4.0, 3.0);
  // the chain equilibrates near the bulk (within ~4 sigma of binomial noise)
  const Scalar r_bulk = 2.0 * ws.upper_tail_mass(8.0);
  CHECK(std::abs(frac_beyond(8.0) - r_bulk) < 0.45 * r_bulk);
  // but cannot diffuse past its excursion scale, starving the far tail
  const Scalar r_far = 2.0 * ws.upper_tail_mass(40.0);
  CHECK(frac_beyond(40.0) < r_far / 3.0);

  auto again = generate_mcmc_dataset(s, uniform_init(), 3, steps, 0.025, 200,
                                     31, tables());
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j <= steps; ++j)
      CHECK(again.trajectories[i].states[j] == ds.trajectories[i].states[j]);
}
