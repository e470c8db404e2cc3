#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "levyctpe/fourier_basis.hpp"
#include "levyctpe/theta.hpp"
#include "levyctpe/types.hpp"

namespace levyctpe {

struct PideError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Real samples at the collocation points x_i = 2 pi (i+1)/M on (0, 2 pi].
struct ValueField {
  Vector samples;
  Index resolution() const { return samples.size(); }
};

Vector collocation_grid(Index M);
ValueField sample_field(const std::function<Scalar(Scalar)>& f, Index M);

// Complex modes for wavenumbers -M/2+1 .. M/2 (conjugate-symmetric for a
// real field); round trips with the sample representation.
Eigen::VectorXcd to_modes(const ValueField& v);
ValueField from_modes(const Eigen::VectorXcd& modes);

// Trigonometric collocation machinery shared by the operations below.
// Basis ordering: 1, cos x, sin x, ..., cos((M/2-1)x), sin((M/2-1)x),
// cos((M/2)x); the Nyquist sine vanishes on the grid.
class SpectralOperator {
 public:
  SpectralOperator(Index M, Scalar alpha);

  const Vector& grid() const { return x_; }
  Vector analyze(const Vector& samples) const;
  Vector synthesize(const Vector& coeffs) const { return value_ * coeffs; }

  // beta v - b v' - d_o v'' + d_f (-lap)^alpha v at the collocation points
  Vector apply(const Vector& v, Scalar beta, const Vector& b,
               const Vector& d_o, const Vector& d_f) const;
  Matrix assemble(Scalar beta, const Vector& b, const Vector& d_o,
                  const Vector& d_f) const;

 private:
  Index m_;
  Scalar alpha_;
  Vector x_;
  Matrix value_, deriv1_, deriv2_, frac_;  // symbol-applied basis samples
};

struct PideProblem {
  Scalar beta = 0.1;
  Scalar alpha = 0.5;
  std::function<Scalar(Scalar)> b;
  std::function<Scalar(Scalar)> d_o;
  std::function<Scalar(Scalar)> d_f;
  std::function<Scalar(Scalar)> r;
  Index M = 128;
  void validate() const;  // beta > 0, M even, d_f > 0 and d_o >= 0 on the grid
};

// Coefficient closures backed by a fitted matrix (clamps applied).
struct CoefficientFields {
  std::function<Scalar(Scalar)> b;
  std::function<Scalar(Scalar)> d_o;
  std::function<Scalar(Scalar)> d_f;
};
CoefficientFields fields_from_theta(ThetaMatrix theta, FourierBasis basis);

ValueField apply_generator(const ValueField& v, const PideProblem& prob);

// Dense trigonometric collocation solve with one refinement step; the
// returned field satisfies |apply_generator(v) - r|_inf <= 1e-9 |r|_inf.
ValueField solve_pide(const PideProblem& prob);

// Reward that makes v_exact the solution of the problem; exact when
// v_exact is band-limited below M/2.
ValueField manufacture_reward(const ValueField& v_exact,
                              const PideProblem& prob);

// Band-limited closure through the samples (trigonometric interpolation).
std::function<Scalar(Scalar)> interpolant(const ValueField& v);

enum class ErrorNorm { sup, l2 };
Scalar value_error(const ValueField& v_hat, const ValueField& v_exact,
                   ErrorNorm norm);

struct StudyRow {
  Scalar epsilon;
  Index trial;
  Scalar err_sup;
  Scalar err_l2;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  Index rejected = 0;  // redrawn perturbations (d_f or d_o went out of range)
  Scalar slope = 0.0;  // log-log regression of mean sup error on epsilon
  Scalar intercept = 0.0;
  Scalar slope_se = 0.0;  // regression standard error (0 with < 3 epsilons)
};

// Perturbation profile applied to each coefficient field per trial:
//   constant  additive N(0, eps^2) constant
//   harmonic  z0 + z1 cos x + z2 sin x, each z ~ N(0, eps^2)
//   bump      z exp(cos(x - u) - 1) with z ~ N(0, eps^2), u uniform phase
enum class PerturbationShape { constant, harmonic, bump };

// Shifts each coefficient field independently per trial, re-solves, and
// regresses the value error against eps.
StudyResult perturbation_study(const PideProblem& prob,
                               const std::vector<Scalar>& epsilons,
                               Index trials, std::uint64_t seed,
                               PerturbationShape shape =
                                   PerturbationShape::constant);

}  // namespace levyctpe
