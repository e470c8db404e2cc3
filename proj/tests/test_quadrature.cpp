#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "levyctpe/quadrature.hpp"

using namespace levyctpe;

namespace {
const QuadratureTables& tables() {
  static QuadratureTables t;
  return t;
}
}  // namespace

TEST_CASE("adaptive integrator on smooth references") {
  auto cube = [](Scalar x) { return x * x * x; };
  AdaptiveResult r = adaptive_integrate(cube, 0.0, 1.0, 0.0, 1e-13);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(0.25).epsilon(1e-13));

  auto s = [](Scalar x) { return std::sin(x); };
  r = adaptive_integrate(s, 0.0, kPi, 0.0, 1e-13);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(2.0).epsilon(1e-12));

  // oscillatory but resolvable
  auto osc = [](Scalar x) { return std::cos(40.0 * x) * std::exp(-x); };
  r = adaptive_integrate(osc, 0.0, 10.0, 1e-15, 1e-12);
  const Scalar exact = (1.0 - std::exp(-10.0) * (std::cos(400.0) -
                                                 40.0 * std::sin(400.0))) /
                       1601.0;
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(exact).epsilon(1e-10));
}

TEST_CASE("gauss-legendre rule on [0,1]") {
  for (int n : {4, 8, 16}) {
    GaussRule g = gauss_legendre01(n);
    REQUIRE(g.nodes.size() == n);
    REQUIRE(g.weights.size() == n);
    for (int i = 1; i < n; ++i) CHECK(g.nodes[i] > g.nodes[i - 1]);
    CHECK(g.weights.sum() == doctest::Approx(1.0).epsilon(1e-15));
    // exact through degree 2n-1
    const int d = 2 * n - 1;
    Scalar acc = 0.0;
    for (int i = 0; i < n; ++i) acc += g.weights[i] * std::pow(g.nodes[i], d);
    CHECK(acc == doctest::Approx(1.0 / (d + 1)).epsilon(1e-13));
  }
}

TEST_CASE("shifted legendre orthogonality") {
  CHECK(shifted_legendre(0, 0.3) == 1.0);
  CHECK(shifted_legendre(1, 0.75) == doctest::Approx(0.5).epsilon(1e-15));
  for (int m : {0, 3, 7}) {
    for (int n : {2, 7, 15}) {
      auto f = [&](Scalar z) {
        return shifted_legendre(m, z) * shifted_legendre(n, z);
      };
      const Scalar v = adaptive_integrate(f, 0.0, 1.0, 1e-15, 1e-13).value;
      const Scalar want = m == n ? 1.0 / (2 * n + 1) : 0.0;
      CHECK(v == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("taylor order brackets are half-open") {
  CHECK(taylor_order(1e-9) == 4);
  CHECK(taylor_order(1e-3) == 4);
  CHECK(taylor_order(std::nextafter(1e-3, 1.0)) == 6);
  CHECK(taylor_order(1e-2) == 6);
  CHECK(taylor_order(std::nextafter(1e-2, 1.0)) == 9);
  CHECK(taylor_order(5e-2) == 9);
  CHECK(taylor_order(1e-1) == 9);
  CHECK(taylor_order(std::nextafter(1e-1, 1.0)) == 17);
  CHECK(taylor_order(1.0) == 17);
  CHECK(taylor_order(std::nextafter(1.0, 2.0)) == -1);
  CHECK(taylor_order(10.0) == -1);
}

TEST_CASE("moment-matched weights reproduce legendre moments") {
  const GaussRule& nodes = tables().moment_nodes();
  for (Scalar alpha : {0.3, 0.5, 0.8}) {
    for (Scalar tau : {1.5, 2.0, 10.0}) {
      const auto w = tables().singular_weights(alpha, tau);
      for (int n = 0; n <= 15; ++n) {
        auto plain = [&](Scalar z) {
          return shifted_legendre(n, z) *
                 std::exp(-tau * std::pow(z, 2.0 * alpha));
        };
        auto frac = [&](Scalar z) {
          return std::pow(z, 2.0 * alpha) * plain(z);
        };
        Scalar qp = 0.0, qf = 0.0;
        for (int j = 0; j < QuadratureTables::kMomentNodes; ++j) {
          const Scalar p = shifted_legendre(n, nodes.nodes[j]);
          qp += w.plain[j] * p;
          qf += w.frac[j] * p;
        }
        const Scalar mp = adaptive_integrate(plain, 0, 1, 1e-16, 1e-14).value;
        const Scalar mf = adaptive_integrate(frac, 0, 1, 1e-16, 1e-14).value;
        CHECK(std::abs(qp - mp) <= 1e-12);
        CHECK(std::abs(qf - mf) <= 1e-12);
      }
    }
  }
}

TEST_CASE("jacobi rules carry the fractional weight") {
  // weight z^{2 alpha kappa}; 16 points are exact through degree 31
  const GaussRule& j1 = tables().jacobi_rule(0.5, 1);  // weight z
  for (int k : {0, 5, 31}) {
    Scalar acc = 0.0;
    for (Index i = 0; i < j1.nodes.size(); ++i)
      acc += j1.weights[i] * std::pow(j1.nodes[i], k);
    CHECK(acc == doctest::Approx(1.0 / (k + 2)).epsilon(1e-13));
  }
  const GaussRule& j0 = tables().jacobi_rule(0.37, 0);  // plain legendre
  Scalar acc = 0.0;
  for (Index i = 0; i < j0.nodes.size(); ++i)
    acc += j0.weights[i] * std::pow(j0.nodes[i], 7);
  CHECK(acc == doctest::Approx(1.0 / 8).epsilon(1e-13));

  const GaussRule& jf = tables().jacobi_rule(0.3, 2);  // weight z^{1.2}
  auto f = [](Scalar z) { return std::pow(z, 1.2) * std::cos(3.0 * z); };
  const Scalar want = adaptive_integrate(f, 0, 1, 1e-16, 1e-14).value;
  acc = 0.0;
  for (Index i = 0; i < jf.nodes.size(); ++i)
    acc += jf.weights[i] * std::cos(3.0 * jf.nodes[i]);
  CHECK(acc == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("singular segment closed forms") {
  // alpha = 1/2 turns the envelope into a plain exponential
  auto one = [](Scalar) { return 1.0; };
  const Scalar v = integrate_singular(one, 0.5, 2.0, tables());
  CHECK(std::abs(v - (1.0 - std::exp(-2.0)) / 2.0) <= 1e-10);

  // tau -> 0 limit: the envelope is flat
  const Scalar v0 = integrate_singular(one, 0.4, 1e-9, tables());
  CHECK(std::abs(v0 - 1.0) <= 1e-9);

  // oscillatory factor against an adaptive reference
  auto osc = [](Scalar z) { return std::cos(3.0 * z); };
  auto ref = [](Scalar z) {
    return std::cos(3.0 * z) * std::exp(-0.05 * std::pow(z, 0.6));
  };
  const Scalar want = adaptive_integrate(ref, 0, 1, 1e-16, 1e-14).value;
  CHECK(std::abs(integrate_singular(osc, 0.3, 0.05, tables()) - want) <= 1e-9);
}

TEST_CASE("singular segment is continuous across branch switches") {
  auto f = [](Scalar z) { return std::cos(7.0 * z) + 0.5 * z; };
  for (Scalar alpha : {0.3, 0.5, 0.8}) {
    for (Scalar tau : {1e-3, 1e-2, 1e-1, 1.0}) {
      const Scalar lo = integrate_singular(f, alpha, tau, tables());
      const Scalar hi =
          integrate_singular(f, alpha, std::nextafter(tau, 2.0), tables());
      CHECK(std::abs(lo - hi) <= 1e-9 * std::max(std::abs(lo), 1.0));
    }
  }
}

TEST_CASE("tail segment closed form and oracle") {
  auto one = [](Scalar) { return 1.0; };
  TailResult r = integrate_tail(one, 0.5, 10.0, tables());
  CHECK(r.converged);
  CHECK(std::abs(r.value - std::exp(-10.0) / 10.0) <= 1e-12);

  auto osc = [](Scalar z) { return std::cos(z); };
  auto ref = [](Scalar z) { return std::cos(z) * std::exp(-z); };
  const Scalar want = adaptive_integrate(ref, 1.0, 60.0, 1e-16, 1e-14).value;
  r = integrate_tail(osc, 0.5, 1.0, tables());
  CHECK(r.converged);
  CHECK(std::abs(r.value - want) <= 1e-9);

  // heavy envelope, no oscillation
  auto poly = [](Scalar z) { return 1.0 / (z * z); };
  auto pref = [](Scalar z) {
    return std::exp(-0.5 * std::pow(z, 0.6)) / (z * z);
  };
  const Scalar pwant =
      adaptive_integrate(pref, 1.0, 5120.0, 1e-16, 1e-13).value;
  r = integrate_tail(poly, 0.3, 0.5, tables());
  CHECK(r.converged);
  CHECK(std::abs(r.value - pwant) <= 1e-9 * pwant);
}

TEST_CASE("tail window is a partition-friendly cutoff") {
  CHECK(tail_window(0.0, 80.0) == 1.0);
  CHECK(tail_window(40.0, 80.0) == 1.0);  // s = 0 boundary
  CHECK(tail_window(80.0, 80.0) == 0.0);
  CHECK(tail_window(120.0, 80.0) == 0.0);
  Scalar prev = 1.0;
  for (Scalar z = 40.0; z <= 80.0; z += 0.5) {
    const Scalar w = tail_window(z, 80.0);
    CHECK(w <= prev + 1e-15);
    CHECK(w >= 0.0);
    CHECK(w <= 1.0);
    prev = w;
  }
  // interior smoothness spot value stays strictly inside (0, 1)
  const Scalar mid = tail_window(60.0, 80.0);
  CHECK(mid > 0.0);
  CHECK(mid < 1.0);
}

TEST_CASE("tail grid levels nest") {
  const auto& tg = tables().tail_grid();
  REQUIRE(tg.z.size() > 0);
  CHECK(tg.z[0] >= 1.0);
  for (int l = 1; l < QuadratureTables::kTailLevels; ++l)
    CHECK(tg.len[l] >= tg.len[l - 1]);
  // level weights agree where both windows are fully open
  for (int l = 0; l + 1 < QuadratureTables::kTailLevels; ++l) {
    const Scalar m = QuadratureTables::kTailBaseM * std::pow(2.0, l);
    for (Index i = 0; i < tg.len[l]; ++i) {
      if (tg.z[i] < 0.5 * m) {
        CHECK(tg.w[l][i] == doctest::Approx(tg.w[l + 1][i]).epsilon(1e-15));
      }
    }
  }
}
