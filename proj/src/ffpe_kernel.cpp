#include "levyctpe/ffpe_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "levyctpe/parallel.hpp"

namespace levyctpe {

namespace {

inline void sincos_at(Scalar x, Scalar& s, Scalar& c) {
#if defined(__GLIBC__)
  ::sincos(x, &s, &c);
#else
  s = std::sin(x);
  c = std::cos(x);
#endif
}

inline void sincos_long(long double x, long double& s, long double& c) {
#if defined(__GLIBC__)
  ::sincosl(x, &s, &c);
#else
  s = std::sin(x);
  c = std::cos(x);
#endif
}

inline Scalar sign_of(Scalar x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

void FfpeQuery::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw KernelError("query: alpha outside (0,1)");
  if (!(t > 0.0) || !std::isfinite(t)) throw KernelError("query: t <= 0");
  if (!(y >= 0.0) || !std::isfinite(y)) throw KernelError("query: bad y");
  if (!(d_o >= 0.0) || !std::isfinite(d_o))
    throw KernelError("query: d_o < 0");
  if (!(d_f >= 0.0) || !std::isfinite(d_f))
    throw KernelError("query: d_f < 0");
  if (!(d_o + d_f > 0.0)) throw KernelError("query: d_o + d_f == 0");
}

// ---------------- DensityWorkspace ----------------

DensityWorkspace::DensityWorkspace(const QuadratureTables& tables, Scalar alpha,
                                   Scalar t, Scalar d_o, Scalar d_f)
    : tables_(tables),
      alpha_(alpha),
      t_(t),
      d_o_(d_o),
      d_f_(d_f),
      two_a_(2.0 * alpha),
      q_(d_o * t),
      tau_(d_f * t) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw KernelError("workspace: alpha outside (0,1)");
  if (!(t > 0.0)) throw KernelError("workspace: t <= 0");
  if (!(q_ >= 0.0) || !(tau_ >= 0.0) || !(q_ + tau_ > 0.0))
    throw KernelError("workspace: need d_o t + d_f t > 0");
  build_singular();
  z2a_ = tables_.tail_z2a(alpha_);

  // tail nodes past this prefix contribute below e^-60 and are skipped
  const auto& grid = tables_.tail_grid();
  const Index full = grid.z.size();
  auto decay = [&](Scalar z) {
    return q_ * z * z + tau_ * std::pow(z, two_a_) - 60.0;
  };
  const Scalar z_max = grid.z[full - 1] + 1.0;
  if (decay(1.0) >= 0.0) {
    eff_len_ = 0;
  } else if (decay(z_max) <= 0.0) {
    eff_len_ = full;
  } else {
    Scalar lo = 1.0, hi = z_max;
    for (int it = 0; it < 80; ++it) {
      Scalar mid = 0.5 * (lo + hi);
      (decay(mid) < 0.0 ? lo : hi) = mid;
    }
    Index panels = static_cast<Index>(std::ceil((hi - 1.0) / 0.25)) + 1;
    eff_len_ = std::min(full, panels * 8);
  }
  ensure_tail_level(1);
}

void DensityWorkspace::build_singular() {
  const int K = taylor_order(tau_);
  if (K < 0) {
    auto w = tables_.singular_weights(alpha_, tau_);
    const GaussRule& g = tables_.moment_nodes();
    const int n = QuadratureTables::kMomentNodes;
    s_z.resize(n);
    s_w.resize(n);
    sf_z.resize(n);
    sf_w.resize(n);
    for (int j = 0; j < n; ++j) {
      Scalar x = g.nodes[j];
      Scalar damp = std::exp(-q_ * x * x);
      s_z[j] = x;
      s_w[j] = w.plain[j] * damp;
      sf_z[j] = x;
      sf_w[j] = w.frac[j] * damp;
    }
    return;
  }
  // Taylor branch: exp(-tau z^{2a}) expanded through order K, each term
  // integrated by the Gauss-Jacobi rule carrying z^{2a kappa} (kappa+1 for
  // the z^{2a}-weighted set); series coefficient and exp(-q z^2) are folded
  // into the stored weights.
  const Index block = 16;
  s_z.resize((K + 1) * block);
  s_w.resize((K + 1) * block);
  sf_z.resize((K + 1) * block);
  sf_w.resize((K + 1) * block);
  Scalar coeff = 1.0;  // (-tau)^kappa / kappa!
  for (int kappa = 0; kappa <= K; ++kappa) {
    if (kappa > 0) coeff *= -tau_ / kappa;
    const GaussRule& plain = tables_.jacobi_rule(alpha_, kappa);
    const GaussRule& frac = tables_.jacobi_rule(alpha_, kappa + 1);
    for (Index j = 0; j < block; ++j) {
      Index off = kappa * block + j;
      Scalar xp = plain.nodes[j];
      s_z[off] = xp;
      s_w[off] = coeff * plain.weights[j] * std::exp(-q_ * xp * xp);
      Scalar xf = frac.nodes[j];
      sf_z[off] = xf;
      sf_w[off] = coeff * frac.weights[j] * std::exp(-q_ * xf * xf);
    }
  }
}

void DensityWorkspace::ensure_tail_level(int level) const {
  if (tail_built_.load(std::memory_order_acquire) > level) return;
  std::lock_guard<std::mutex> lk(tail_mutex_);
  const auto& grid = tables_.tail_grid();
  for (int l = tail_built_.load(std::memory_order_relaxed); l <= level; ++l) {
    Index len = std::min(grid.len[l], eff_len_);
    tail_w_[l] =
        grid.w[l].head(len) *
        (-(q_ * grid.z2.head(len) + tau_ * z2a_->head(len))).exp();
    tail_built_.store(l + 1, std::memory_order_release);
  }
}

// Singular + windowed-tail evaluation at this workspace's own scale.  For
// each requested kind the tail truncation doubles until two consecutive
// levels agree to 1e-14; kinds that never settle keep the last value and
// raise their flag.
void DensityWorkspace::unscaled(Scalar y, const bool need[kNumHk],
                                Scalar out[kNumHk], bool flag[kNumHk]) const {
  for (int k = 0; k < kNumHk; ++k) flag[k] = false;

  const bool need_plain = need[kH0] || need[kH1] || need[kH2] || need[kHm1];
  Scalar sing[kNumHk] = {0, 0, 0, 0, 0};
  if (need_plain) {
    const Index ns = s_z.size();
    for (Index j = 0; j < ns; ++j) {
      Scalar s, c;
      sincos_at(y * s_z[j], s, c);
      Scalar w = s_w[j];
      if (need[kH0]) sing[kH0] += w * c;
      if (need[kH1]) sing[kH1] += w * s_z[j] * s;
      if (need[kH2]) sing[kH2] += w * s_z[j] * s_z[j] * c;
      if (need[kHm1]) sing[kHm1] += w * s / s_z[j];
    }
  }
  if (need[kH2a]) {
    const Index nf = sf_z.size();
    for (Index j = 0; j < nf; ++j)
      sing[kH2a] += sf_w[j] * std::cos(y * sf_z[j]);
  }

  const auto& grid = tables_.tail_grid();
  Scalar prev[kNumHk] = {0, 0, 0, 0, 0};
  Scalar tail[kNumHk] = {0, 0, 0, 0, 0};
  bool done[kNumHk];
  for (int k = 0; k < kNumHk; ++k) done[k] = !need[k];

  // Panel-recurrence trig: nodes sit at a_p + 0.25 g_j, so cos/sin(y z)
  // come from one rotation per panel and eight fixed in-panel factors,
  // with a fresh evaluation every 16 panels to stop drift.
  std::vector<Scalar> ts, tc;
  Scalar cg[8], sg[8], cr = 1.0, sr = 0.0, cp = 1.0, sp = 0.0;
  Index next_p = 0;
  bool trig_init = false;
  auto extend_trig = [&](Index to_len) {
    const Index to_p = to_len / 8;
    if (to_p <= next_p) return;
    ts.resize(to_len);
    tc.resize(to_len);
    if (!trig_init) {
      for (int j = 0; j < 8; ++j)
        sincos_at(y * (grid.z[j] - 1.0), sg[j], cg[j]);
      sincos_at(0.25 * y, sr, cr);
      trig_init = true;
    }
    for (Index p = next_p; p < to_p; ++p) {
      if ((p & 15) == 0) {
        sincos_at(y * (1.0 + 0.25 * p), sp, cp);
      } else {
        const Scalar c2 = cp * cr - sp * sr;
        sp = sp * cr + cp * sr;
        cp = c2;
      }
      const Index base = p * 8;
      for (int j = 0; j < 8; ++j) {
        tc[base + j] = cp * cg[j] - sp * sg[j];
        ts[base + j] = sp * cg[j] + cp * sg[j];
      }
    }
    next_p = to_p;
  };

  const bool fused = need[kH0] && need[kH1] && need[kH2] && need[kH2a] &&
                     !need[kHm1];
  for (int l = 0; l < QuadratureTables::kTailLevels; ++l) {
    bool all_done = true;
    for (int k = 0; k < kNumHk; ++k) all_done &= done[k];
    if (all_done) break;

    ensure_tail_level(l);
    const Index len = std::min(grid.len[l], eff_len_);
    extend_trig(len);
    const Scalar* w = tail_w_[l].data();
    Scalar acc[kNumHk] = {0, 0, 0, 0, 0};
    if (fused) {
      Scalar a0 = 0, a1 = 0, a2 = 0, a3 = 0;
      for (Index i = 0; i < len; ++i) {
        const Scalar wc = w[i] * tc[i];
        a0 += wc;
        a1 += w[i] * grid.z[i] * ts[i];
        a2 += grid.z2[i] * wc;
        a3 += (*z2a_)[i] * wc;
      }
      acc[kH0] = a0;
      acc[kH1] = a1;
      acc[kH2] = a2;
      acc[kH2a] = a3;
    } else {
      for (int k = 0; k < kNumHk; ++k) {
        if (done[k]) continue;
        Scalar a = 0.0;
        switch (k) {
          case kH0:
            for (Index i = 0; i < len; ++i) a += w[i] * tc[i];
            break;
          case kH1:
            for (Index i = 0; i < len; ++i) a += w[i] * grid.z[i] * ts[i];
            break;
          case kH2:
            for (Index i = 0; i < len; ++i) a += w[i] * grid.z2[i] * tc[i];
            break;
          case kH2a:
            for (Index i = 0; i < len; ++i) a += w[i] * (*z2a_)[i] * tc[i];
            break;
          case kHm1:
            for (Index i = 0; i < len; ++i) a += w[i] * ts[i] / grid.z[i];
            break;
        }
        acc[k] = a;
      }
    }
    for (int k = 0; k < kNumHk; ++k) {
      if (done[k]) continue;
      if (l > 0 && std::abs(acc[k] - prev[k]) <= QuadratureTables::kTailEps) {
        tail[k] = acc[k];
        done[k] = true;
      } else {
        prev[k] = acc[k];
      }
    }
  }
  for (int k = 0; k < kNumHk; ++k) {
    if (!need[k]) continue;
    if (!done[k]) {
      tail[k] = prev[k];
      flag[k] = true;
    }
    out[k] = sing[k] + tail[k];
  }
}

// Contraction factor for re-expressing the integral at a friendlier scale.
// Default maps the oscillation to pi/2; if that would overconcentrate the
// Gaussian envelope (or y is essentially zero) pick c so the combined
// envelope has decayed by ~e^-36 at z = 40, which the first two tail
// levels integrate exactly.
Scalar DensityWorkspace::choose_scale(Scalar y) const {
  if (y > 1e-12) {
    Scalar c = (0.5 * kPi) / y;
    if (q_ * c * c <= 20.0) return c;
  }
  auto excess = [&](Scalar u) {
    return q_ * u * u + tau_ * std::pow(u, two_a_) - 36.0;
  };
  Scalar lo = 1.0, hi = 1.0;
  if (excess(1.0) < 0.0) {
    while (excess(hi) < 0.0 && hi < 1e300) hi *= 2.0;
    lo = hi * 0.5;
  } else {
    while (excess(lo) >= 0.0 && lo > 1e-300) lo *= 0.5;
    hi = lo * 2.0;
  }
  for (int it = 0; it < 200; ++it) {
    Scalar mid = std::sqrt(lo * hi);
    (excess(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi) / 40.0;
}

void DensityWorkspace::radial(Scalar y, const bool need[kNumHk],
                              Scalar out[kNumHk], bool* scaled_any,
                              bool flag[kNumHk]) const {
  for (int k = 0; k < kNumHk; ++k) flag[k] = false;
  *scaled_any = false;
  if (y <= 10.0) {
    unscaled(y, need, out, flag);
    bool any = false;
    for (int k = 0; k < kNumHk; ++k) any |= (need[k] && flag[k]);
    if (!any) return;
  }

  bool sub[kNumHk];
  bool want_child = false;
  for (int k = 0; k < kNumHk; ++k) {
    sub[k] = need[k] && (y > 10.0 || flag[k]);
    want_child |= sub[k];
  }
  if (!want_child) return;

  const Scalar c = choose_scale(y);
  DensityWorkspace child(tables_, alpha_, t_ * std::pow(c, two_a_),
                         d_o_ * std::pow(c, 2.0 - two_a_), d_f_);
  Scalar cv[kNumHk];
  bool cf[kNumHk];
  child.unscaled(y * c, sub, cv, cf);
  const Scalar h_of[kNumHk] = {0.0, 1.0, 2.0, two_a_, -1.0};
  for (int k = 0; k < kNumHk; ++k) {
    if (!sub[k]) continue;
    out[k] = cv[k] * std::pow(c, h_of[k] + 1.0);
    flag[k] = cf[k];
  }
  *scaled_any = true;
}

DensityWorkspace::Raw DensityWorkspace::raw_all(Scalar y) const {
  const bool need[kNumHk] = {true, true, true, true, false};
  Scalar out[kNumHk];
  bool flag[kNumHk];
  bool scaled = false;
  radial(y, need, out, &scaled, flag);
  Raw r;
  for (int k = 0; k < 4; ++k) {
    r.v[static_cast<std::size_t>(k)] = out[k];
    r.flagged |= flag[k];
  }
  r.scaled = scaled;
  return r;
}

Scalar DensityWorkspace::raw_one(IntegrandKind kind, Scalar y,
                                 bool* flagged) const {
  bool need[kNumHk] = {false, false, false, false, false};
  need[static_cast<int>(kind)] = true;
  Scalar out[kNumHk];
  bool flag[kNumHk];
  bool scaled = false;
  radial(y, need, out, &scaled, flag);
  if (flagged) *flagged = flag[static_cast<int>(kind)];
  return out[static_cast<int>(kind)];
}

Scalar DensityWorkspace::upper_tail_mass(Scalar w) const {
  if (w == 0.0) return 0.5;
  bool need[kNumHk] = {false, false, false, false, true};
  Scalar out[kNumHk];
  bool flag[kNumHk];
  bool scaled = false;
  radial(std::abs(w), need, out, &scaled, flag);
  return 0.5 - sign_of(w) * out[kHm1] / kPi;
}

// ---------------- simple wrappers ----------------

Scalar density_integral(IntegrandKind kind, const FfpeQuery& q,
                        const QuadratureTables& tables) {
  q.validate();
  DensityWorkspace ws(tables, q.alpha, q.t, q.d_o, q.d_f);
  return ws.raw_one(kind, q.y);
}

Scalar transition_density(const FfpeQuery& q, const QuadratureTables& tables) {
  Scalar p = density_integral(IntegrandKind::density, q, tables) / kPi;
  return std::max(p, kDensityFloor);
}

// ---------------- long-double reference quadrature ----------------

namespace {

constexpr int kBruteNodes = 32;

struct LongRule {
  long double nodes[kBruteNodes];
  long double weights[kBruteNodes];
};

const LongRule& gl32_long() {
  static const LongRule rule = [] {
    LongRule r{};
    const int n = kBruteNodes;
    for (int i = 0; i < n; ++i) {
      long double x = std::cos(kPi * (i + 0.75L) / (n + 0.5L));
      long double p0, p1, dp;
      auto legendre = [&] {
        p0 = 1.0L;
        p1 = x;
        for (int k = 2; k <= n; ++k) {
          long double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0L);
      };
      for (int it = 0; it < 100; ++it) {
        legendre();
        long double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-19L) break;
      }
      legendre();
      r.nodes[n - 1 - i] = (x + 1.0L) / 2.0L;
      r.weights[n - 1 - i] = 1.0L / ((1.0L - x * x) * dp * dp);
    }
    return r;
  }();
  return rule;
}

}  // namespace

Scalar brute_force_density(const FfpeQuery& q, Scalar rel_tol) {
  q.validate();
  const long double qt = static_cast<long double>(q.d_o) * q.t;
  const long double taut = static_cast<long double>(q.d_f) * q.t;
  const long double aa = 2.0L * q.alpha;
  const long double y = q.y;

  // envelope radius: exp(-(qt R^2 + taut R^{2a})) = 1e-20
  const long double target = 46.0517018598809137L;
  auto envelope_exponent = [&](long double r) {
    long double e = qt * r * r;
    if (taut > 0.0L) e += taut * std::exp(aa * std::log(r));
    return e;
  };
  long double R = 1.0L;
  while (envelope_exponent(R) < target) R *= 2.0L;
  {
    long double lo = R * 0.5L, hi = R;
    for (int it = 0; it < 200; ++it) {
      long double mid = 0.5L * (lo + hi);
      (envelope_exponent(mid) < target ? lo : hi) = mid;
    }
    R = hi;
  }

  // envelope length scale and starting width for the graded region
  long double s0 = R;
  if (qt > 0.0L) s0 = std::min(s0, 1.0L / std::sqrt(qt));
  if (taut > 0.0L)
    s0 = std::min(s0, std::exp(-std::log(taut) / aa));  // taut^{-1/(2a)}
  long double w_min = s0 / 16.0L;
  if (taut > 0.0L) {
    // keep the fractional kink's contribution on the first panel below 1e-18
    long double w_frac = std::exp(std::log(1e-18L / taut) / aa);
    w_min = std::min(w_min, w_frac);
  }
  w_min = std::max(w_min, R * 1e-25L);
  // four oscillation periods per 32-point panel
  const long double w_osc =
      y > 0.0 ? 8.0L * static_cast<long double>(kPi) / y
              : std::numeric_limits<long double>::infinity();

  const LongRule& g = gl32_long();

  // one full sweep over [0, R]; `halving` shrinks every panel 2^halving.
  // Panels are summed block-by-block (fixed blocks, parallel evaluation,
  // sequential reduction) so the result is independent of thread count.
  auto sweep = [&](int halving) {
    const long double shrink =
        std::pow(0.5L, static_cast<long double>(halving));
    std::vector<long double> edges;
    edges.push_back(0.0L);
    long double a = 0.0L;
    while (a < R) {
      long double width = std::min(w_osc, std::max(a / 6.0L, w_min)) * shrink;
      long double b = std::min(a + width, R);
      edges.push_back(b);
      a = b;
    }
    const Index n_pan = static_cast<Index>(edges.size()) - 1;
    const Index block = 1024;
    const Index n_blocks = (n_pan + block - 1) / block;
    std::vector<long double> bsum(n_blocks);

    parallel_for(n_blocks, [&](Index bi) {
      long double total = 0.0L, comp = 0.0L;
      long double h_cached = -1.0L;
      long double cgj[kBruteNodes], sgj[kBruteNodes];
      const Index pe = std::min(n_pan, (bi + 1) * block);
      for (Index p = bi * block; p < pe; ++p) {
        const long double pa = edges[p];
        const long double h = edges[p + 1] - pa;
        if (h != h_cached) {
          for (int j = 0; j < kBruteNodes; ++j)
            sincos_long(y * h * g.nodes[j], sgj[j], cgj[j]);
          h_cached = h;
        }
        long double ca, sa;
        sincos_long(y * pa, sa, ca);
        long double acc = 0.0L;
        for (int j = 0; j < kBruteNodes; ++j) {
          const long double r = pa + h * g.nodes[j];
          long double e = qt * r * r;
          if (taut > 0.0L && r > 0.0L) e += taut * std::exp(aa * std::log(r));
          acc += g.weights[j] * (ca * cgj[j] - sa * sgj[j]) * std::exp(-e);
        }
        const long double val = acc * h;
        const long double t2 = total + val;
        comp += (std::abs(total) >= std::abs(val)) ? (total - t2) + val
                                                   : (val - t2) + total;
        total = t2;
      }
      bsum[bi] = total + comp;
    });

    long double total = 0.0L, comp = 0.0L;
    for (Index bi = 0; bi < n_blocks; ++bi) {
      const long double val = bsum[bi];
      const long double t2 = total + val;
      comp += (std::abs(total) >= std::abs(val)) ? (total - t2) + val
                                                 : (val - t2) + total;
      total = t2;
    }
    return total + comp;
  };

  long double prev = sweep(0);
  for (int pass = 1; pass <= 2; ++pass) {
    long double cur = sweep(pass);
    long double err = std::abs(cur - prev);
    long double scale = std::max(std::abs(cur),
                                 static_cast<long double>(kDensityFloor));
    if (err <= rel_tol * scale)
      return static_cast<Scalar>(cur / kPi);
    prev = cur;
  }
  throw KernelError("brute_force_density: requested tolerance not reached");
}

// ---------------- likelihood gradients ----------------

namespace {

struct LocalFields {
  Vector phi;
  FieldCoefficients c;
  Scalar y_signed;
};

LocalFields fields_at(const TransitionPair& pair, const ThetaMatrix& theta,
                      const FourierBasis& basis) {
  LocalFields lf;
  lf.phi.resize(basis.size());
  basis.eval(pair.x_current, lf.phi);
  lf.c = evaluate_coefficients(theta, basis, pair.x_current);
  lf.y_signed = pair.dx() - pair.dt() * lf.c.b;
  return lf;
}

}  // namespace

Vector loglik_grad_direct(const TransitionPair& pair, const ThetaMatrix& theta,
                          const FourierBasis& basis, Scalar alpha,
                          const QuadratureTables& tables) {
  const Scalar dt = pair.dt();
  if (!(dt > 0.0)) throw KernelError("loglik_grad_direct: dt <= 0");
  LocalFields lf = fields_at(pair, theta, basis);
  DensityWorkspace ws(tables, alpha, dt, lf.c.d_o, lf.c.d_f);
  return loglik_grad_direct(pair, theta, basis, ws);
}

Vector loglik_grad_direct(const TransitionPair& pair, const ThetaMatrix& theta,
                          const FourierBasis& basis,
                          const DensityWorkspace& ws) {
  const Scalar dt = pair.dt();
  if (!(dt > 0.0)) throw KernelError("loglik_grad_direct: dt <= 0");
  LocalFields lf = fields_at(pair, theta, basis);
  DensityWorkspace::Raw raw = ws.raw_all(std::abs(lf.y_signed));
  const Scalar denom = raw.v[static_cast<int>(IntegrandKind::density)];
  if (!(denom > kPi * kDensityFloor))
    throw KernelError("loglik_grad_direct: density underflow");

  const Scalar rb =
      dt * sign_of(lf.y_signed) *
      raw.v[static_cast<int>(IntegrandKind::grad_b)] / denom;
  const Scalar rdo =
      -dt * raw.v[static_cast<int>(IntegrandKind::grad_do)] / denom;
  const Scalar rdf =
      -dt * raw.v[static_cast<int>(IntegrandKind::grad_df)] / denom;

  const Index K = basis.size();
  Vector g(3 * K);
  for (Index k = 0; k < K; ++k) {
    g[k] = -lf.phi[k] * rb;
    g[K + k] = -lf.phi[k] * rdo;
    g[2 * K + k] = -lf.phi[k] * rdf;
  }
  if (!g.allFinite()) throw KernelError("loglik_grad_direct: non-finite");
  return g;
}

Vector loglik_grad_fd(const TransitionPair& pair, const ThetaMatrix& theta,
                      const FourierBasis& basis, Scalar alpha,
                      const QuadratureTables& tables, int b_fd, Rng& rng,
                      Scalar step_override) {
  const Scalar dt = pair.dt();
  if (!(dt > 0.0)) throw KernelError("loglik_grad_fd: dt <= 0");
  if (b_fd < 1) throw KernelError("loglik_grad_fd: b_fd < 1");
  LocalFields lf = fields_at(pair, theta, basis);

  DensityWorkspace base(tables, alpha, dt, lf.c.d_o, lf.c.d_f);
  Scalar p0 =
      base.raw_one(IntegrandKind::density, std::abs(lf.y_signed)) / kPi;
  if (!(p0 > kDensityFloor))
    throw KernelError("loglik_grad_fd: density underflow");
  const Scalar lp0 = std::log(p0);

  const Index K = basis.size();
  const Index nc = 3 * K;
  std::vector<Index> idx(nc);
  for (Index i = 0; i < nc; ++i) idx[i] = i;
  const Index m_sel = std::min<Index>(b_fd, nc);
  for (Index j = 0; j < m_sel; ++j) {
    Index pick = j + static_cast<Index>(rng.uniform_index(
                         static_cast<std::uint64_t>(nc - j)));
    std::swap(idx[j], idx[pick]);
  }

  Vector g = Vector::Zero(nc);
  for (Index j = 0; j < m_sel; ++j) {
    const Index m = idx[j];
    const Scalar mag =
        step_override > 0.0 ? step_override : rng.uniform(0.001, 0.1);
    const Scalar step = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * mag;

    ThetaMatrix pert = theta;
    pert.coef(static_cast<Index>(m / K), static_cast<Index>(m % K)) += step;
    FieldCoefficients c = evaluate_coefficients(pert, basis, pair.x_current);
    Scalar yp = std::abs(pair.dx() - dt * c.b);
    DensityWorkspace ws(tables, alpha, dt, c.d_o, c.d_f);
    Scalar p1 = ws.raw_one(IntegrandKind::density, yp) / kPi;
    if (!(p1 > kDensityFloor))
      throw KernelError("loglik_grad_fd: density underflow");
    g[m] = -(std::log(p1) - lp0) / step;
  }
  if (!g.allFinite()) throw KernelError("loglik_grad_fd: non-finite");
  return g;
}

// ---------------- one-sided stable tail series ----------------

Scalar stable_tail_series(Scalar c, Scalar alpha, Scalar w, Scalar sigma2) {
  if (!(w > 0.0)) throw KernelError("stable_tail_series: w <= 0");
  if (!(c >= 0.0)) throw KernelError("stable_tail_series: c < 0");
  if (c == 0.0) return 0.0;
  const Scalar aa = 2.0 * alpha;
  if (!(c * std::pow(w, -aa) < 0.25))
    throw KernelError("stable_tail_series: outside asymptotic regime");

  const Scalar lc = std::log(c), lw = std::log(w);
  Scalar sum = 0.0, sum2 = 0.0;
  Scalar prev_mag = std::numeric_limits<Scalar>::infinity();
  for (int k = 1; k <= 60; ++k) {
    Scalar lmag = k * lc - std::lgamma(k + 1.0) + std::lgamma(aa * k) -
                  aa * k * lw;
    Scalar mag = std::exp(lmag);
    if (mag > prev_mag) break;  // asymptotic truncation at the smallest term
    prev_mag = mag;
    Scalar term = ((k % 2) ? 1.0 : -1.0) * std::sin(k * kPi * alpha) * mag;
    sum += term;
    sum2 += term * (aa * k) * (aa * k + 1.0) / (w * w);
    if (mag <= 1e-18 * std::abs(sum)) break;
  }
  return (sum + 0.5 * sigma2 * sum2) / kPi;
}

}  // namespace levyctpe
