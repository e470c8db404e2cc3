#include "levyctpe/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace levyctpe {

namespace {

// ---- Gauss-Legendre nodes by Newton iteration on P_n ----
template <typename T>
void legendre_value_deriv(int n, T x, T& p, T& dp) {
  T p0 = 1, p1 = x;
  for (int k = 2; k <= n; ++k) {
    T p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  p = p1;
  dp = n * (x * p1 - p0) / (x * x - 1);
}

}  // namespace

GaussRule gauss_legendre01(int n) {
  GaussRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    // Newton from the Chebyshev estimate; roots found in descending order
    long double x = std::cos(kPi * (i + 0.75L) / (n + 0.5L));
    for (int it = 0; it < 100; ++it) {
      long double p, dp;
      legendre_value_deriv<long double>(n, x, p, dp);
      long double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-19L) break;
    }
    long double p, dp;
    legendre_value_deriv<long double>(n, x, p, dp);
    long double w = 2.0L / ((1.0L - x * x) * dp * dp);
    r.nodes[n - 1 - i] = static_cast<Scalar>((x + 1.0L) / 2.0L);  // ascending
    r.weights[n - 1 - i] = static_cast<Scalar>(w / 2.0L);
  }
  return r;
}

Scalar shifted_legendre(int n, Scalar z) {
  Scalar x = 2.0 * z - 1.0;
  if (n == 0) return 1.0;
  Scalar p0 = 1.0, p1 = x;
  for (int k = 2; k <= n; ++k) {
    Scalar p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

int taylor_order(Scalar tau) {
  if (tau > 1.0) return -1;
  if (tau > 1e-1) return 17;
  if (tau > 1e-2) return 9;
  if (tau > 1e-3) return 6;
  return 4;
}

Scalar tail_window(Scalar z, Scalar m) {
  Scalar s = 2.0 * std::abs(z) / m - 1.0;
  if (s <= 0.0) return 1.0;
  if (s >= 1.0) return 0.0;
  return std::exp(-2.0 * std::exp(-1.0 / (s * s)) / ((1.0 - s) * (1.0 - s)));
}

// ---------------- adaptive Gauss-Kronrod ----------------

namespace {

constexpr Scalar kXgk[8] = {
    0.9914553711208126, 0.9491079123427585, 0.8648644233597691,
    0.7415311855993944, 0.5860872354676911, 0.4058451513773972,
    0.2077849550078985, 0.0};
constexpr Scalar kWgk[8] = {
    0.02293532201052922, 0.06309209262997855, 0.1047900103222502,
    0.1406532597155259,  0.1690047266392679,  0.1903505780647854,
    0.2044329400752989,  0.2094821410847278};
constexpr Scalar kWg[4] = {0.1294849661688697, 0.2797053914892767,
                           0.3818300505051189, 0.4179591836734694};

void gk15(const std::function<Scalar(Scalar)>& f, Scalar a, Scalar b,
          Scalar& value, Scalar& err) {
  const Scalar c = 0.5 * (a + b), h = 0.5 * (b - a);
  Scalar fc = f(c);
  Scalar kron = kWgk[7] * fc;
  Scalar gauss = kWg[3] * fc;
  for (int j = 0; j < 7; ++j) {
    Scalar fv = f(c - h * kXgk[j]) + f(c + h * kXgk[j]);
    kron += kWgk[j] * fv;
    if (j % 2 == 1) gauss += kWg[j / 2] * fv;
  }
  value = kron * h;
  err = std::abs((kron - gauss) * h);
}

}  // namespace

AdaptiveResult adaptive_integrate(const std::function<Scalar(Scalar)>& f,
                                  Scalar a, Scalar b, Scalar abs_tol,
                                  Scalar rel_tol, int max_panels) {
  AdaptiveResult res;
  if (a == b) {
    res.converged = true;
    return res;
  }
  struct Panel {
    Scalar a, b, value;
  };
  std::multimap<Scalar, Panel> queue;  // keyed by error estimate
  Scalar v0, e0;
  gk15(f, a, b, v0, e0);
  Scalar total_v = v0, total_e = e0;
  queue.emplace(e0, Panel{a, b, v0});
  int n_panels = 1;
  const Scalar min_width = 1e-15 * (std::abs(a) + std::abs(b) + 1.0);
  while (total_e > std::max(abs_tol, rel_tol * std::abs(total_v)) &&
         n_panels < max_panels) {
    auto worst = std::prev(queue.end());
    Panel p = worst->second;
    Scalar e_old = worst->first;
    if (p.b - p.a < min_width) break;  // cannot refine further
    queue.erase(worst);
    Scalar mid = 0.5 * (p.a + p.b);
    Scalar vl, el, vr, er;
    gk15(f, p.a, mid, vl, el);
    gk15(f, mid, p.b, vr, er);
    total_v += vl + vr - p.value;
    total_e += el + er - e_old;
    queue.emplace(el, Panel{p.a, mid, vl});
    queue.emplace(er, Panel{mid, p.b, vr});
    ++n_panels;
  }
  res.value = total_v;
  res.error = total_e;
  res.converged = total_e <= std::max(abs_tol, rel_tol * std::abs(total_v));
  return res;
}

// ---------------- QuadratureTables ----------------

QuadratureTables::QuadratureTables() {
  gauss16_ = gauss_legendre01(16);
  gauss32_ = gauss_legendre01(kMomentNodes);

  legendre_at_nodes_.resize(kMomentNodes, kMomentNodes);
  for (int n = 0; n < kMomentNodes; ++n)
    for (int j = 0; j < kMomentNodes; ++j)
      legendre_at_nodes_(n, j) = shifted_legendre(n, gauss32_.nodes[j]);

  // tail panels: width 1/4, 8-point rule, from 1 out to 5120
  const GaussRule g8 = gauss_legendre01(8);
  const Scalar width = 0.25;
  const Scalar m_max = kTailBaseM * (1 << (kTailLevels - 1));
  const Index n_panels = static_cast<Index>(std::llround((m_max - 1.0) / width));
  tail_.z.resize(n_panels * 8);
  tail_.z2.resize(n_panels * 8);
  for (Index p = 0; p < n_panels; ++p) {
    Scalar a = 1.0 + width * static_cast<Scalar>(p);
    for (int j = 0; j < 8; ++j) {
      Scalar z = a + width * g8.nodes[j];
      tail_.z[p * 8 + j] = z;
      tail_.z2[p * 8 + j] = z * z;
    }
  }
  for (int l = 0; l < kTailLevels; ++l) {
    Scalar m = kTailBaseM * (1 << l);
    Index len = static_cast<Index>(std::llround((m - 1.0) / width)) * 8;
    tail_.len[l] = len;
    tail_.w[l].resize(len);
    for (Index i = 0; i < len; ++i)
      tail_.w[l][i] = width * g8.weights[i % 8] * tail_window(tail_.z[i], m);
  }
}

QuadratureTables::SingularWeights QuadratureTables::singular_weights(
    Scalar alpha, Scalar tau) const {
  WeightKey key;
  std::memcpy(&key.first, &alpha, sizeof key.first);
  std::memcpy(&key.second, &tau, sizeof key.second);
  {
    std::lock_guard<std::mutex> lk(cache_mutex_);
    auto it = weight_cache_.find(key);
    if (it != weight_cache_.end()) {
      weight_lru_.splice(weight_lru_.begin(), weight_lru_, it->second.lru_pos);
      return it->second.w;
    }
  }

  const Scalar two_a = 2.0 * alpha;
  // scale reference: total mass of the plain weight
  AdaptiveResult mass = adaptive_integrate(
      [&](Scalar z) { return std::exp(-std::pow(z, two_a) * tau); }, 0.0, 1.0,
      1e-16, 1e-13);
  const Scalar abs_tol = std::max(1e-16, 1e-13 * std::abs(mass.value));

  const int nm = kMomentNodes;
  Vector m_plain(nm), m_frac(nm);
  for (int n = 0; n < nm; ++n) {
    auto plain = [&](Scalar z) {
      return shifted_legendre(n, z) * std::exp(-std::pow(z, two_a) * tau);
    };
    auto frac = [&](Scalar z) {
      return shifted_legendre(n, z) * std::pow(z, two_a) *
             std::exp(-std::pow(z, two_a) * tau);
    };
    AdaptiveResult rp = adaptive_integrate(plain, 0.0, 1.0, abs_tol, 1e-13);
    AdaptiveResult rf = adaptive_integrate(frac, 0.0, 1.0, abs_tol, 1e-13);
    if (!rp.converged || !rf.converged)
      throw QuadratureError("singular_weights: moment integral did not converge");
    m_plain[n] = rp.value;
    m_frac[n] = rf.value;
  }

  // Invert through discrete orthogonality: at the Gauss nodes
  // sum_j glw_j P_n(x_j) P_m(x_j) = delta_nm / (2n+1) holds exactly for
  // n+m below twice the node count, so diag(glw) B^T diag(2n+1) is the
  // inverse of the Legendre-Vandermonde B.
  auto invert = [&](const Vector& m) {
    Vector scaled(nm);
    for (int n = 0; n < nm; ++n) scaled[n] = (2.0 * n + 1.0) * m[n];
    Vector w = legendre_at_nodes_.transpose() * scaled;
    for (int j = 0; j < nm; ++j) w[j] *= gauss32_.weights[j];
    return w;
  };
  SingularWeights out;
  for (int set = 0; set < 2; ++set) {
    const Vector& m = set == 0 ? m_plain : m_frac;
    Vector w = invert(m);
    w += invert(m - legendre_at_nodes_ * w);
    Scalar resid = (legendre_at_nodes_ * w - m).cwiseAbs().maxCoeff();
    if (!(resid <= 1e-12))
      throw QuadratureError("singular_weights: degenerate moment system");
    auto& dst = set == 0 ? out.plain : out.frac;
    for (int j = 0; j < nm; ++j) dst[j] = w[j];
  }

  {
    std::lock_guard<std::mutex> lk(cache_mutex_);
    auto it = weight_cache_.find(key);
    if (it == weight_cache_.end()) {
      weight_lru_.push_front(key);
      weight_cache_.emplace(key, WeightEntry{out, weight_lru_.begin()});
      if (weight_cache_.size() > kWeightCacheCap) {
        weight_cache_.erase(weight_lru_.back());
        weight_lru_.pop_back();
      }
    }
  }
  return out;
}

const GaussRule& QuadratureTables::jacobi_rule(Scalar alpha, int kappa) const {
  JacobiKey key;
  std::memcpy(&key.alpha_bits, &alpha, sizeof key.alpha_bits);
  key.kappa = kappa;
  std::lock_guard<std::mutex> lk(jacobi_mutex_);
  auto it = jacobi_cache_.find(key);
  if (it != jacobi_cache_.end()) return *it->second;

  // Golub-Welsch for the Jacobi weight (1+x)^bb on [-1,1], bb = 2 alpha kappa,
  // then mapped to weight z^bb on [0,1]
  const int n = 16;
  const Scalar bb = 2.0 * alpha * kappa;
  Vector diag(n), off(n - 1);
  diag[0] = bb / (bb + 2.0);
  for (int k = 1; k < n; ++k) {
    Scalar d = 2.0 * k + bb;
    diag[k] = bb * bb / (d * (d + 2.0));
    Scalar beta = 4.0 * k * k * (k + bb) * (k + bb) /
                  (d * d * (d + 1.0) * (d - 1.0));
    off[k - 1] = std::sqrt(beta);
  }
  Matrix jac = Matrix::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    jac(k, k) = diag[k];
    if (k + 1 < n) jac(k, k + 1) = jac(k + 1, k) = off[k];
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(jac);
  if (es.info() != Eigen::Success)
    throw QuadratureError("jacobi_rule: eigensolver failed");
  const Scalar mu0 = std::pow(2.0, bb + 1.0) / (bb + 1.0);
  auto rule = std::make_unique<GaussRule>();
  rule->nodes.resize(n);
  rule->weights.resize(n);
  const Scalar map_w = std::pow(2.0, -(bb + 1.0));
  for (int j = 0; j < n; ++j) {
    rule->nodes[j] = (es.eigenvalues()[j] + 1.0) / 2.0;
    Scalar v0 = es.eigenvectors()(0, j);
    rule->weights[j] = map_w * mu0 * v0 * v0;
  }
  const GaussRule& ref = *rule;
  jacobi_cache_.emplace(key, std::move(rule));
  return ref;
}

std::shared_ptr<const Array> QuadratureTables::tail_z2a(Scalar alpha) const {
  std::uint64_t bits;
  std::memcpy(&bits, &alpha, sizeof bits);
  std::lock_guard<std::mutex> lk(z2a_mutex_);
  auto it = z2a_cache_.find(bits);
  if (it != z2a_cache_.end()) return it->second;
  auto arr = std::make_shared<Array>(tail_.z.size());
  const Scalar two_a = 2.0 * alpha;
  for (Index i = 0; i < tail_.z.size(); ++i)
    (*arr)[i] = std::pow(tail_.z[i], two_a);
  z2a_cache_.emplace(bits, arr);
  return arr;
}

// ---------------- singular / tail entry points ----------------

Scalar integrate_singular(const std::function<Scalar(Scalar)>& f, Scalar alpha,
                          Scalar tau, const QuadratureTables& tables) {
  if (!(tau > 0.0)) throw QuadratureError("integrate_singular: tau <= 0");
  const int K = taylor_order(tau);
  if (K < 0) {
    auto w = tables.singular_weights(alpha, tau);
    const GaussRule& g = tables.moment_nodes();
    Scalar sum = 0.0;
    for (int j = 0; j < QuadratureTables::kMomentNodes; ++j)
      sum += w.plain[j] * f(g.nodes[j]);
    return sum;
  }
  Scalar sum = 0.0, coeff = 1.0;  // (-tau)^kappa / kappa!
  for (int kappa = 0; kappa <= K; ++kappa) {
    if (kappa > 0) coeff *= -tau / kappa;
    const GaussRule& rule = tables.jacobi_rule(alpha, kappa);
    Scalar term = 0.0;
    for (Index j = 0; j < rule.nodes.size(); ++j)
      term += rule.weights[j] * f(rule.nodes[j]);
    sum += coeff * term;
  }
  return sum;
}

TailResult integrate_tail(const std::function<Scalar(Scalar)>& f, Scalar alpha,
                          Scalar tau, const QuadratureTables& tables) {
  if (!(tau > 0.0)) throw QuadratureError("integrate_tail: tau <= 0");
  const auto& grid = tables.tail_grid();
  auto z2a = tables.tail_z2a(alpha);
  TailResult res;
  Scalar prev = 0.0;
  for (int l = 0; l < QuadratureTables::kTailLevels; ++l) {
    Scalar q = 0.0;
    const Array& w = grid.w[l];
    for (Index i = 0; i < grid.len[l]; ++i)
      q += w[i] * f(grid.z[i]) * std::exp(-(*z2a)[i] * tau);
    if (l > 0 && std::abs(q - prev) <= QuadratureTables::kTailEps) {
      res.value = q;
      res.converged = true;
      return res;
    }
    prev = q;
  }
  res.value = prev;
  res.converged = false;
  return res;
}

}  // namespace levyctpe
