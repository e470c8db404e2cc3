#include "levyctpe/value_pide.hpp"

#include <algorithm>
#include <cmath>

#include "levyctpe/parallel.hpp"
#include "levyctpe/rng.hpp"

namespace levyctpe {

Vector collocation_grid(Index M) {
  if (M < 4 || M % 2 != 0) throw PideError("resolution must be even and >= 4");
  Vector x(M);
  for (Index i = 0; i < M; ++i)
    x[i] = kTwoPi * static_cast<Scalar>(i + 1) / static_cast<Scalar>(M);
  return x;
}

ValueField sample_field(const std::function<Scalar(Scalar)>& f, Index M) {
  const Vector x = collocation_grid(M);
  ValueField v;
  v.samples.resize(M);
  for (Index i = 0; i < M; ++i) v.samples[i] = f(x[i]);
  return v;
}

SpectralOperator::SpectralOperator(Index M, Scalar alpha)
    : m_(M), alpha_(alpha), x_(collocation_grid(M)) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw PideError("SpectralOperator: alpha must lie in (0, 1)");
  value_.resize(M, M);
  deriv1_.resize(M, M);
  deriv2_.resize(M, M);
  frac_.resize(M, M);
  const Index half = M / 2;
  // angles reduced mod 2 pi by integer arithmetic: without this the m-fold
  // argument rounding breaks grid orthogonality at the 1e-14 level, which
  // the m^2 symbol then amplifies past the residual tolerance
  auto angle = [&](Index m, Index i) {
    return kTwoPi * static_cast<Scalar>((m * (i + 1)) % M) /
           static_cast<Scalar>(M);
  };
  for (Index i = 0; i < M; ++i) {
    value_(i, 0) = 1.0;
    deriv1_(i, 0) = 0.0;
    deriv2_(i, 0) = 0.0;
    frac_(i, 0) = 0.0;
    for (Index m = 1; m < half; ++m) {
      const Scalar c = std::cos(angle(m, i));
      const Scalar s = std::sin(angle(m, i));
      const Scalar m2 = static_cast<Scalar>(m) * m;
      const Scalar mf = std::pow(static_cast<Scalar>(m), 2.0 * alpha);
      value_(i, 2 * m - 1) = c;
      value_(i, 2 * m) = s;
      deriv1_(i, 2 * m - 1) = -m * s;
      deriv1_(i, 2 * m) = m * c;
      deriv2_(i, 2 * m - 1) = -m2 * c;
      deriv2_(i, 2 * m) = -m2 * s;
      frac_(i, 2 * m - 1) = mf * c;
      frac_(i, 2 * m) = mf * s;
    }
    // Nyquist cosine; its sine partner vanishes identically on the grid
    const Scalar cn = std::cos(angle(half, i));
    value_(i, M - 1) = cn;
    deriv1_(i, M - 1) = 0.0;
    deriv2_(i, M - 1) = -static_cast<Scalar>(half) * half * cn;
    frac_(i, M - 1) = std::pow(static_cast<Scalar>(half), 2.0 * alpha) * cn;
  }
}

Vector SpectralOperator::analyze(const Vector& samples) const {
  if (samples.size() != m_)
    throw PideError("analyze: resolution mismatch");
  // extended-precision dots: rounding here is amplified by the (M/2)^2
  // second-derivative symbol, which would spoil small-residual checks
  Vector c(m_);
  for (Index j = 0; j < m_; ++j) {
    long double acc = 0.0L;
    for (Index i = 0; i < m_; ++i)
      acc += static_cast<long double>(value_(i, j)) * samples[i];
    c[j] = static_cast<Scalar>(acc * 2.0L / m_);
  }
  c[0] *= 0.5;
  c[m_ - 1] *= 0.5;
  return c;
}

Vector SpectralOperator::apply(const Vector& v, Scalar beta, const Vector& b,
                               const Vector& d_o, const Vector& d_f) const {
  const Vector c = analyze(v);
  return beta * v - b.cwiseProduct(deriv1_ * c) -
         d_o.cwiseProduct(deriv2_ * c) + d_f.cwiseProduct(frac_ * c);
}

Matrix SpectralOperator::assemble(Scalar beta, const Vector& b,
                                  const Vector& d_o, const Vector& d_f) const {
  Matrix A(m_, m_);
  parallel_for(m_, [&](Index j) {
    A.col(j) = beta * value_.col(j) - b.cwiseProduct(deriv1_.col(j)) -
               d_o.cwiseProduct(deriv2_.col(j)) +
               d_f.cwiseProduct(frac_.col(j));
  });
  return A;
}

Eigen::VectorXcd to_modes(const ValueField& v) {
  const Index M = v.resolution();
  SpectralOperator op(M, 0.5);
  const Vector c = op.analyze(v.samples);
  const Index half = M / 2;
  Eigen::VectorXcd modes(M);  // wavenumbers -M/2+1 .. M/2
  auto at = [&](Index k) -> std::complex<Scalar>& {
    return modes[k + half - 1];
  };
  at(0) = c[0];
  for (Index m = 1; m < half; ++m) {
    at(m) = std::complex<Scalar>(0.5 * c[2 * m - 1], -0.5 * c[2 * m]);
    at(-m) = std::conj(at(m));
  }
  at(half) = c[M - 1];
  return modes;
}

ValueField from_modes(const Eigen::VectorXcd& modes) {
  const Index M = modes.size();
  const Index half = M / 2;
  auto at = [&](Index k) { return modes[k + half - 1]; };
  Vector c(M);
  c[0] = at(0).real();
  for (Index m = 1; m < half; ++m) {
    c[2 * m - 1] = (at(m) + at(-m)).real();
    c[2 * m] = (at(-m) - at(m)).imag();
  }
  c[M - 1] = at(half).real();
  SpectralOperator op(M, 0.5);
  ValueField v;
  v.samples = op.synthesize(c);
  return v;
}

void PideProblem::validate() const {
  if (!(beta > 0.0)) throw PideError("PideProblem: beta must be positive");
  if (!b || !d_o || !d_f || !r)
    throw PideError("PideProblem: all fields must be set");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw PideError("PideProblem: alpha must lie in (0, 1)");
  const Vector x = collocation_grid(M);
  for (Index i = 0; i < M; ++i) {
    if (!(d_f(x[i]) > 0.0))
      throw PideError("PideProblem: d_f must be strictly positive");
    if (!(d_o(x[i]) >= 0.0))
      throw PideError("PideProblem: d_o must be nonnegative");
  }
}

CoefficientFields fields_from_theta(ThetaMatrix theta, FourierBasis basis) {
  CoefficientFields f;
  f.b = [theta, basis](Scalar x) {
    return evaluate_coefficients(theta, basis, x).b;
  };
  f.d_o = [theta, basis](Scalar x) {
    return evaluate_coefficients(theta, basis, x).d_o;
  };
  f.d_f = [theta, basis](Scalar x) {
    return evaluate_coefficients(theta, basis, x).d_f;
  };
  return f;
}

namespace {

struct GridFields {
  Vector b, d_o, d_f, r;
};

GridFields fields_on_grid(const PideProblem& prob, const Vector& x) {
  GridFields g;
  const Index M = x.size();
  g.b.resize(M);
  g.d_o.resize(M);
  g.d_f.resize(M);
  g.r.resize(M);
  for (Index i = 0; i < M; ++i) {
    g.b[i] = prob.b(x[i]);
    g.d_o[i] = prob.d_o(x[i]);
    g.d_f[i] = prob.d_f(x[i]);
    g.r[i] = prob.r(x[i]);
  }
  return g;
}

Scalar condition_estimate(const Matrix& A,
                          const Eigen::PartialPivLU<Matrix>& lu) {
  const Scalar norm_a = A.cwiseAbs().rowwise().sum().maxCoeff();
  // probe |A^-1|_inf with a few random sign vectors
  Scalar norm_inv = 0.0;
  Rng rng(1);
  for (int it = 0; it < 8; ++it) {
    Vector z(A.rows());
    for (Index i = 0; i < z.size(); ++i)
      z[i] = rng.uniform01() < 0.5 ? -1.0 : 1.0;
    norm_inv = std::max(norm_inv, lu.solve(z).cwiseAbs().maxCoeff());
  }
  return norm_a * norm_inv;
}

ValueField solve_on(const SpectralOperator& op, const PideProblem& prob,
                    const GridFields& g) {
  const Matrix A = op.assemble(prob.beta, g.b, g.d_o, g.d_f);
  Eigen::PartialPivLU<Matrix> lu(A);
  Vector c = lu.solve(g.r);
  c += lu.solve(g.r - A * c);

  ValueField v;
  v.samples = op.synthesize(c);
  const Vector resid = op.apply(v.samples, prob.beta, g.b, g.d_o, g.d_f) - g.r;
  const Scalar bound =
      1e-9 * std::max(g.r.cwiseAbs().maxCoeff(), Scalar(1e-30));
  if (!(resid.cwiseAbs().maxCoeff() <= bound)) {
    throw PideError(
        "solve_pide: residual above tolerance; condition estimate " +
        std::to_string(condition_estimate(A, lu)) +
        " (beta too small for the resolution, or degenerate d_f)");
  }
  return v;
}

}  // namespace

ValueField apply_generator(const ValueField& v, const PideProblem& prob) {
  prob.validate();
  if (v.resolution() != prob.M)
    throw PideError("apply_generator: resolution mismatch");
  SpectralOperator op(prob.M, prob.alpha);
  GridFields g = fields_on_grid(prob, op.grid());
  ValueField out;
  out.samples = op.apply(v.samples, prob.beta, g.b, g.d_o, g.d_f);
  return out;
}

ValueField solve_pide(const PideProblem& prob) {
  prob.validate();
  SpectralOperator op(prob.M, prob.alpha);
  GridFields g = fields_on_grid(prob, op.grid());
  return solve_on(op, prob, g);
}

ValueField manufacture_reward(const ValueField& v_exact,
                              const PideProblem& prob) {
  PideProblem p = prob;
  if (!p.r) p.r = [](Scalar) { return 0.0; };  // unused by the generator
  return apply_generator(v_exact, p);
}

std::function<Scalar(Scalar)> interpolant(const ValueField& v) {
  const Index m = v.resolution();
  const SpectralOperator op(m, 0.5);  // alpha irrelevant for analysis
  const Vector c = op.analyze(v.samples);
  return [c, m](Scalar x) {
    Scalar s = c[0];
    for (Index k = 1; k < m / 2; ++k)
      s += c[2 * k - 1] * std::cos(k * x) + c[2 * k] * std::sin(k * x);
    s += c[m - 1] * std::cos((m / 2) * x);
    return s;
  };
}

Scalar value_error(const ValueField& v_hat, const ValueField& v_exact,
                   ErrorNorm norm) {
  if (v_hat.resolution() != v_exact.resolution())
    throw PideError("value_error: resolution mismatch");
  const Vector diff = v_hat.samples - v_exact.samples;
  if (norm == ErrorNorm::sup) return diff.cwiseAbs().maxCoeff();
  const Scalar ref = v_exact.samples.norm();
  return ref > 0.0 ? diff.norm() / ref : diff.norm();
}

namespace {

// one perturbation field on the grid; p holds the per-field draw
Vector shaped_shift(PerturbationShape shape, const Scalar* p,
                    const Vector& x) {
  switch (shape) {
    case PerturbationShape::constant:
      return Vector::Constant(x.size(), p[0]);
    case PerturbationShape::harmonic:
      return p[0] + p[1] * x.array().cos() + p[2] * x.array().sin();
    case PerturbationShape::bump:
      return p[0] * ((x.array() - p[1]).cos() - 1.0).exp();
  }
  throw PideError("perturbation_study: unknown shape");
}

}  // namespace

StudyResult perturbation_study(const PideProblem& prob,
                               const std::vector<Scalar>& epsilons,
                               Index trials, std::uint64_t seed,
                               PerturbationShape shape) {
  prob.validate();
  if (trials < 1) throw PideError("perturbation_study: trials >= 1");
  SpectralOperator op(prob.M, prob.alpha);
  GridFields g = fields_on_grid(prob, op.grid());
  const ValueField v_base = solve_on(op, prob, g);

  StudyResult res;
  res.rows.resize(epsilons.size() * trials);

  // perturbations drawn sequentially so redraw accounting is deterministic
  Rng rng(seed);
  auto draw = [&](Scalar eps, Scalar* p) {
    p[0] = eps * rng.normal();
    if (shape == PerturbationShape::harmonic) {
      p[1] = eps * rng.normal();
      p[2] = eps * rng.normal();
    } else if (shape == PerturbationShape::bump) {
      p[1] = rng.uniform(0.0, kTwoPi);
    }
  };
  std::vector<std::array<Scalar, 9>> shift(res.rows.size());
  for (std::size_t t = 0; t < shift.size(); ++t) {
    const Scalar eps = epsilons[t / trials];
    for (int redraw = 0;; ++redraw) {
      if (redraw > 10000)
        throw PideError("perturbation_study: cannot satisfy positivity");
      std::array<Scalar, 9> p{};
      draw(eps, p.data());
      draw(eps, p.data() + 3);
      draw(eps, p.data() + 6);
      if ((g.d_f + shaped_shift(shape, p.data() + 6, op.grid())).minCoeff() <
              1e-3 ||
          (g.d_o + shaped_shift(shape, p.data() + 3, op.grid())).minCoeff() <
              0.0) {
        ++res.rejected;
        continue;
      }
      shift[t] = p;
      break;
    }
  }

  parallel_for(static_cast<Index>(shift.size()), [&](Index t) {
    GridFields gp = g;
    gp.b += shaped_shift(shape, shift[t].data(), op.grid());
    gp.d_o += shaped_shift(shape, shift[t].data() + 3, op.grid());
    gp.d_f += shaped_shift(shape, shift[t].data() + 6, op.grid());
    const ValueField v = solve_on(op, prob, gp);
    StudyRow& row = res.rows[t];
    row.epsilon = epsilons[t / trials];
    row.trial = static_cast<Index>(t % trials);
    row.err_sup = value_error(v, v_base, ErrorNorm::sup);
    row.err_l2 = value_error(v, v_base, ErrorNorm::l2);
  });

  // log-log regression of the per-epsilon mean sup error
  const Index ne = static_cast<Index>(epsilons.size());
  Vector lx(ne), ly(ne);
  for (Index j = 0; j < ne; ++j) {
    Scalar mean = 0.0;
    for (Index t = 0; t < trials; ++t) mean += res.rows[j * trials + t].err_sup;
    mean /= static_cast<Scalar>(trials);
    lx[j] = std::log(epsilons[j]);
    ly[j] = std::log(std::max(mean, Scalar(1e-300)));
  }
  const Scalar mx = lx.mean(), my = ly.mean();
  const Scalar sxx = (lx.array() - mx).square().sum();
  res.slope = ne > 1 ? ((lx.array() - mx) * (ly.array() - my)).sum() / sxx : 0.0;
  res.intercept = my - res.slope * mx;
  if (ne > 2) {
    const Vector fit = res.intercept + res.slope * lx.array();
    const Scalar s2 = (ly - fit).squaredNorm() / static_cast<Scalar>(ne - 2);
    res.slope_se = std::sqrt(s2 / sxx);
  }
  return res;
}

}  // namespace levyctpe
