#include "levyctpe/recovery.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <memory>

#include "levyctpe/parallel.hpp"
#include "levyctpe/quadrature.hpp"
#include "levyctpe/rng.hpp"

namespace levyctpe {

namespace {

Scalar median_of(std::vector<Scalar> v) {
  if (v.empty()) throw RecoveryError("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Shared pool construction: dev(pair) measures the centered increment and
// ct_record is the nominal ct, scaled down by the halving loop on record.
template <class Dev, class CtOf>
SamplePools assemble_pools(const std::vector<TransitionPair>& all, Scalar mu,
                           Dev&& dev, CtOf&& ct_of, Scalar ct_record,
                           Scalar trt, Index batch) {
  SamplePools pools;
  pools.mu = mu;
  pools.trt = trt;
  std::vector<Scalar> devs;
  for (const auto& p : all) {
    const Scalar d = dev(p);
    if (d < trt) {
      pools.p_main.push_back(p);
      devs.push_back(d);
    }
  }
  if (pools.p_main.empty())
    throw RecoveryError("build_pools: no pairs survive the trt filter");

  Scalar scale = 1.0;
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<TransitionPair> tail;
    for (std::size_t i = 0; i < pools.p_main.size(); ++i)
      if (devs[i] > scale * ct_of(pools.p_main[i])) tail.push_back(pools.p_main[i]);
    if (static_cast<Index>(tail.size()) >= batch) {
      pools.p_tail = std::move(tail);
      pools.ct = ct_record * scale;
      pools.r_sample = static_cast<Scalar>(pools.p_tail.size()) /
                       static_cast<Scalar>(pools.p_main.size());
      return pools;
    }
    scale *= 0.5;
  }
  throw RecoveryError("build_pools: tail pool cannot reach the batch size");
}

}  // namespace

SamplePools build_pools(const TrajectoryDataset& dataset, Scalar ct,
                        Scalar trt, Index batch) {
  if (!(ct > 0.0 && ct < trt))
    throw RecoveryError("build_pools: need 0 < ct < trt");
  if (batch < 1) throw RecoveryError("build_pools: batch >= 1");
  const auto all = dataset.all_pairs();
  if (all.empty()) throw RecoveryError("build_pools: empty dataset");

  std::vector<Scalar> dx(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) dx[i] = all[i].dx();
  const Scalar mu = median_of(dx);

  return assemble_pools(
      all, mu, [&](const TransitionPair& p) { return std::abs(p.dx() - mu); },
      [&](const TransitionPair&) { return ct; }, ct, trt, batch);
}

SamplePools build_pools_nonuniform(const TrajectoryDataset& dataset,
                                   const std::function<Scalar(Scalar)>& ct_fn,
                                   Scalar trt, Index batch) {
  if (!ct_fn) throw RecoveryError("build_pools_nonuniform: ct_fn must be set");
  if (batch < 1) throw RecoveryError("build_pools_nonuniform: batch >= 1");
  const auto all = dataset.all_pairs();
  if (all.empty()) throw RecoveryError("build_pools_nonuniform: empty dataset");

  std::vector<Scalar> rate(all.size()), dts(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    const Scalar dt = all[i].dt();
    if (!(dt > 0.0)) throw RecoveryError("build_pools_nonuniform: dt <= 0");
    rate[i] = all[i].dx() / dt;
    dts[i] = dt;
  }
  const Scalar mu = median_of(rate);
  const Scalar dt_med = median_of(dts);

  return assemble_pools(
      all, mu,
      [&](const TransitionPair& p) { return std::abs(p.dx() - mu * p.dt()); },
      [&](const TransitionPair& p) { return ct_fn(p.dt()); }, ct_fn(dt_med),
      trt, batch);
}

Scalar tcf_from_ratios(Scalar r_theta, Scalar r_sample) {
  const Scalar tcf = std::max(0.0, (r_theta - r_sample) / (1.0 - r_sample));
  return std::min(tcf, 1.0 - 1e-12);
}

TcfState compute_tcf(const ThetaMatrix& theta, Scalar dt, Scalar ct,
                     Scalar mu, Scalar r_sample, Scalar alpha,
                     const QuadratureTables& tables) {
  if (!(r_sample >= 0.0 && r_sample < 1.0))
    throw RecoveryError("compute_tcf: r_sample must lie in [0, 1)");
  if (!(ct > 0.0 && dt > 0.0))
    throw RecoveryError("compute_tcf: ct > 0, dt > 0");

  const Scalar b = theta.coef(0, 0);
  const Scalar d_o = std::max(0.0, theta.coef(1, 0));
  const Scalar d_f = std::max(kDfFloor, theta.coef(2, 0));
  DensityWorkspace ws(tables, alpha, dt, d_o, d_f);
  const Scalar center = b * dt;

  // window (ct, ct + 200] on both sides of mu: 125 panels of 8-point
  // Gauss-Legendre per side, 2000 points total
  static const GaussRule rule = gauss_legendre01(8);
  const int panels = 125;
  const Scalar width = 200.0 / panels;
  Scalar mass = 0.0;
  for (int p = 0; p < panels; ++p) {
    const Scalar a = ct + width * p;
    for (int j = 0; j < 8; ++j) {
      const Scalar u = a + width * rule.nodes[j];
      const Scalar right =
          ws.raw_one(IntegrandKind::density, std::abs(mu + u - center));
      const Scalar left =
          ws.raw_one(IntegrandKind::density, std::abs(mu - u - center));
      mass += width * rule.weights[j] * (right + left) / kPi;
    }
  }
  const Scalar edge = ct + 200.0;
  mass += stable_tail_series(d_f * dt, alpha, edge + mu - center, 2.0 * d_o * dt);
  mass += stable_tail_series(d_f * dt, alpha, edge - mu + center, 2.0 * d_o * dt);

  TcfState state;
  state.r_theta = mass;
  state.r_sample = r_sample;
  state.tcf = tcf_from_ratios(mass, r_sample);
  return state;
}

bool adam_step(Vector& theta, AdamState& state, const Vector& grad,
               Scalar eta, Scalar beta1, Scalar beta2, Scalar eps) {
  if (!grad.allFinite()) return false;
  if (state.m.size() != theta.size()) {
    state.m = Vector::Zero(theta.size());
    state.v = Vector::Zero(theta.size());
    state.step = 0;
  }
  ++state.step;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad).eval();
  const Scalar bc1 = 1.0 - std::pow(beta1, static_cast<Scalar>(state.step));
  const Scalar bc2 = 1.0 - std::pow(beta2, static_cast<Scalar>(state.step));
  const Array mhat = state.m.array() / bc1;
  const Array vhat = state.v.array() / bc2;
  theta.array() -= eta * mhat / (vhat.sqrt() + eps);
  return true;
}

void FitConfig::validate() const {
  if (!(eta > 0.0 && eps > 0.0) || !(beta1 > 0.0 && beta1 < 1.0) ||
      !(beta2 > 0.0 && beta2 < 1.0))
    throw RecoveryError("FitConfig: bad Adam hyperparameters");
  if (step_limit < 1 || batch < 1 || tcf_warmup < 1 || ma_window < 1)
    throw RecoveryError("FitConfig: counts must be positive");
  if (ma_window > step_limit)
    throw RecoveryError("FitConfig: ma_window must not exceed step_limit");
  if (!(fd_mix >= 0.0 && fd_mix <= 1.0))
    throw RecoveryError("FitConfig: fd_mix in [0, 1]");
}

ThetaMatrix unflatten_theta(const Vector& v, Index K) {
  ThetaMatrix t;
  t.coef.resize(3, K);
  for (Index l = 0; l < 3; ++l)
    for (Index k = 0; k < K; ++k) t.coef(l, k) = v[l * K + k];
  return t;
}

Vector flatten_theta(const ThetaMatrix& theta) {
  const Index K = theta.coef.cols();
  Vector v(3 * K);
  for (Index l = 0; l < 3; ++l)
    for (Index k = 0; k < K; ++k) v[l * K + k] = theta.coef(l, k);
  return v;
}

namespace {

// Small FIFO of workspaces keyed by (t, d_o, d_f) bit patterns: one entry
// suffices for a constant basis, where the whole batch shares coefficients.
class WsCache {
 public:
  WsCache(const QuadratureTables& tables, Scalar alpha)
      : tables_(tables), alpha_(alpha) {}

  const DensityWorkspace& get(Scalar t, Scalar d_o, Scalar d_f) {
    std::array<std::uint64_t, 3> key = {bits(t), bits(d_o), bits(d_f)};
    for (auto& e : entries_)
      if (e.key == key) return *e.ws;
    if (entries_.size() >= 8) entries_.erase(entries_.begin());
    entries_.push_back(
        {key, std::make_unique<DensityWorkspace>(tables_, alpha_, t, d_o, d_f)});
    return *entries_.back().ws;
  }

 private:
  static std::uint64_t bits(Scalar x) {
    std::uint64_t u;
    static_assert(sizeof(u) == sizeof(x));
    std::memcpy(&u, &x, sizeof(u));
    return u;
  }
  struct Entry {
    std::array<std::uint64_t, 3> key;
    std::unique_ptr<DensityWorkspace> ws;
  };
  const QuadratureTables& tables_;
  Scalar alpha_;
  std::vector<Entry> entries_;
};

}  // namespace

FitResult fit(const TrajectoryDataset& dataset, const FourierBasis& basis,
              Scalar alpha, const FitConfig& config, Scalar ct, Scalar trt,
              std::uint64_t seed, const QuadratureTables& tables) {
  config.validate();
  SamplePools pools = build_pools(dataset, ct, trt, config.batch);
  const Index K = basis.size();
  const Index n = 3 * K;
  const Index B = config.batch;
  const Scalar dt = pools.p_main.front().dt();

  Rng rng(seed);
  Vector th(n);
  for (Index l = 0; l < 3; ++l)
    for (Index k = 0; k < K; ++k)
      th[l * K + k] = (k == 0) ? rng.uniform(1.0, 5.0) : 0.01 * rng.normal();

  FitResult res;
  res.ct_effective = pools.ct;
  res.history.theta.resize(n, config.step_limit);
  res.history.tcf.reserve(config.step_limit);
  res.history.pool.reserve(config.step_limit);

  AdamState adam;
  WsCache cache(tables, alpha);
  Scalar tcf = 0.0;

  Vector ma_sum = Vector::Zero(n);
  const Index ring_len = 1001;
  Matrix ma_ring(n, ring_len);

  Matrix grads(n, B);
  std::vector<const TransitionPair*> batch(B);
  std::vector<const DensityWorkspace*> ws_of(B);
  const Index fd_b = config.fd_components > 0 ? config.fd_components : n;

  Index i = 0;
  for (i = 1; i <= config.step_limit; ++i) {
    const Scalar u_pool = rng.uniform01();
    const bool tail_draw = u_pool < tcf;
    const auto& pool = tail_draw ? pools.p_tail : pools.p_main;
    const bool fd_step = config.fd_mix > 0.0 && rng.uniform01() < config.fd_mix;

    for (Index j = 0; j < B; ++j)
      batch[j] = &pool[rng.uniform_index(pool.size())];

    const ThetaMatrix theta = unflatten_theta(th, K);
    if (fd_step) {
      for (Index j = 0; j < B; ++j)
        grads.col(j) = loglik_grad_fd(*batch[j], theta, basis, alpha, tables,
                                      static_cast<int>(fd_b), rng);
    } else {
      for (Index j = 0; j < B; ++j) {
        const auto c = evaluate_coefficients(theta, basis, batch[j]->x_current);
        ws_of[j] = &cache.get(batch[j]->dt(), c.d_o, c.d_f);
      }
      parallel_for(B, [&](Index j) {
        grads.col(j) = loglik_grad_direct(*batch[j], theta, basis, *ws_of[j]);
      });
    }
    const Vector g = grads.rowwise().mean();
    adam_step(th, adam, g, config.eta, config.beta1, config.beta2, config.eps);

    res.history.tcf.push_back(tcf);
    res.history.pool.push_back(tail_draw ? 1 : 0);
    res.history.theta.col(i - 1) = th;

    if (config.use_tcf && i >= config.tcf_warmup) {
      const Scalar bm = th[0];
      const Scalar dom = std::max(0.0, th[K]);
      const Scalar dfm = std::max(kDfFloor, th[2 * K]);
      const DensityWorkspace& wsm = cache.get(dt, dom, dfm);
      const Scalar center = bm * dt;
      const Scalar r_theta = wsm.upper_tail_mass(pools.ct + pools.mu - center) +
                             wsm.upper_tail_mass(pools.ct - pools.mu + center);
      tcf = tcf_from_ratios(r_theta, pools.r_sample);
    }

    // moving average of the iterates, ring-buffered for the convergence test
    ma_sum += th;
    if (i > config.ma_window)
      ma_sum -= res.history.theta.col(i - config.ma_window - 1);
    const Index denom = std::min(i, config.ma_window);
    ma_ring.col(i % ring_len) = ma_sum / static_cast<Scalar>(denom);

    if (i >= config.ma_window && i > 1000) {
      const auto cur = ma_ring.col(i % ring_len);
      const auto old = ma_ring.col((i - 1000) % ring_len);
      bool settled = true;
      for (Index m = 0; m < n && settled; ++m)
        settled = std::abs(cur[m] - old[m]) <
                  1e-4 * std::max(std::abs(old[m]), Scalar(1e-8));
      if (settled) {
        res.converged = true;
        break;
      }
    }
  }
  res.steps_run = std::min(i, config.step_limit);
  res.final_tcf = tcf;
  res.history.theta.conservativeResize(n, res.steps_run);

  const Index span = std::min(res.steps_run, config.ma_window);
  const Vector ma =
      res.history.theta.rightCols(span).rowwise().mean();
  res.theta_ma = unflatten_theta(ma, K);
  return res;
}

}  // namespace levyctpe
