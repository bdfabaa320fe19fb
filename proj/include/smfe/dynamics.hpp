#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <variant>

#include "smfe/coefficients.hpp"
#include "smfe/core.hpp"
#include "smfe/measure.hpp"
#include "smfe/wasserstein.hpp"

namespace smfe {

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

/// Generation parameters (seed, dt, steps) of the underlying increment block
/// plus the coarsening factor applied to it afterwards.
struct NoiseProvenance {
  bool present = false;
  std::uint64_t seed = 0;
  double dt = 0.0;
  std::size_t steps = 0;
  std::size_t coarsening = 1;

  friend bool operator==(const NoiseProvenance&, const NoiseProvenance&) = default;
};

/// Gaussian increments dB[step][p] ~ N(0, dt), one channel per data atom.
///
/// For a finite data measure the cylindrical Wiener process on L2(Theta, w)
/// is exactly sum_p e_p B_p with e_p = 1_{theta_p} / sqrt(w_p), so
/// int g dW = sum_p g(theta_p) sqrt(w_p) dB_p.
class NoisePath {
 public:
  NoisePath() = default;

  static NoisePath generate(std::uint64_t seed, double dt, std::size_t steps, std::size_t channels) {
    if (!(dt > 0.0)) throw Error("NoisePath: dt must be positive");
    if (channels == 0) throw Error("NoisePath: need at least one channel");
    NoisePath n;
    n.prov_ = {true, seed, dt, steps, 1};
    n.dt_ = dt;
    n.steps_ = steps;
    n.channels_ = channels;
    n.inc_.resize(steps * channels);
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, std::sqrt(dt));
    for (double& x : n.inc_) x = nd(gen);
    return n;
  }

  /// Recreates a path from its provenance record.
  static NoisePath regenerate(const NoiseProvenance& prov, std::size_t channels) {
    if (!prov.present) throw Error("NoisePath: no provenance recorded");
    NoisePath n = generate(prov.seed, prov.dt, prov.steps, channels);
    return prov.coarsening == 1 ? n : n.coarsened(prov.coarsening);
  }

  /// Sums `factor` consecutive increments: the same Brownian path on a grid of step factor * dt.
  NoisePath coarsened(std::size_t factor) const {
    if (factor == 0 || steps_ % factor != 0) throw Error("NoisePath: coarsening factor must divide the step count");
    NoisePath n;
    n.prov_ = prov_;
    n.prov_.coarsening = prov_.coarsening * factor;
    n.dt_ = prov_.dt * static_cast<double>(n.prov_.coarsening);
    n.steps_ = steps_ / factor;
    n.channels_ = channels_;
    n.inc_.assign(n.steps_ * channels_, 0.0);
    for (std::size_t s = 0; s < steps_; ++s)
      for (std::size_t p = 0; p < channels_; ++p) n.inc_[(s / factor) * channels_ + p] += inc_[s * channels_ + p];
    return n;
  }

  std::span<const double> step(std::size_t k) const { return {inc_.data() + k * channels_, channels_}; }
  std::size_t steps() const { return steps_; }
  std::size_t channels() const { return channels_; }
  double dt() const { return dt_; }
  const NoiseProvenance& provenance() const { return prov_; }

 private:
  NoiseProvenance prov_;
  double dt_ = 0.0;
  std::size_t steps_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> inc_;
};

// ---------------------------------------------------------------------------
// Configuration and trajectories
// ---------------------------------------------------------------------------

enum class Scheme { EulerMaruyama };

struct IntegratorConfig {
  double dt = 1e-3;
  double horizon = 1.0;
  double epsilon = 0.0;  ///< noise scale; sqrt(epsilon) multiplies the stochastic integral
  Scheme scheme = Scheme::EulerMaruyama;
  std::size_t snapshot_stride = 1;

  std::size_t steps() const {
    validate();
    return static_cast<std::size_t>(std::llround(horizon / dt));
  }

  void validate() const {
    if (!(dt > 0.0)) throw Error("IntegratorConfig: dt must be positive");
    if (!(horizon >= 0.0)) throw Error("IntegratorConfig: horizon must be non-negative");
    if (!(epsilon >= 0.0)) throw Error("IntegratorConfig: epsilon must be non-negative");
    if (snapshot_stride == 0) throw Error("IntegratorConfig: snapshot stride must be positive");
    const double r = horizon / dt;
    if (std::abs(r - std::round(r)) > 1e-9) throw Error("IntegratorConfig: T/dt must be an integer");
  }
};

/// Snapshots of an ensemble path; snapshot 0 is the initial state and the last is step T/dt.
struct Trajectory {
  IntegratorConfig config;
  NoiseProvenance noise;
  std::vector<ParticleEnsemble> snapshots;
  std::vector<std::size_t> steps;

  const ParticleEnsemble& initial() const { return snapshots.front(); }
  const ParticleEnsemble& final() const { return snapshots.back(); }
  std::size_t size() const { return snapshots.size(); }
};

inline bool records_step(std::size_t k, std::size_t nsteps, std::size_t stride) {
  return k % stride == 0 || k == nsteps;
}

// ---------------------------------------------------------------------------
// Euler-Maruyama step
// ---------------------------------------------------------------------------

namespace detail {

struct StepWorkspace {
  Vec v, g, scaled;
};

/// One explicit step for all particles from the same pre-step state.
/// `means` are the feature means of the measure driving the coefficients.
inline void em_step(const CoefficientSet& c, const PointSet& in, std::span<const double> means, double dt,
                    double sqrt_eps, std::span<const double> dB, PointSet& out, StepWorkspace& ws,
                    std::size_t step_index = 0) {
  const std::size_t d = c.dim(), P = c.channels();
  const auto w = c.channel_weights();
  ws.v.resize(d);
  ws.g.resize(P * d);
  ws.scaled.resize(P);
  const bool noisy = sqrt_eps != 0.0;
  if (noisy)
    for (std::size_t p = 0; p < P; ++p) ws.scaled[p] = sqrt_eps * std::sqrt(w[p]) * dB[p];
  if (out.size() != in.size() || out.dim() != d) out = PointSet(in.size(), d);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto x = in[i];
    auto y = out[i];
    c.drift_and_noise(x, means, ws.v, ws.g);
    for (std::size_t j = 0; j < d; ++j) y[j] = x[j] + ws.v[j] * dt;
    if (noisy)
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t j = 0; j < d; ++j) y[j] += ws.g[p * d + j] * ws.scaled[p];
    if (!all_finite(y))
      throw DivergenceError("non-finite particle state at step " + std::to_string(step_index + 1) + ", particle " +
                            std::to_string(i));
  }
}

inline void check_noise(const CoefficientSet& c, const IntegratorConfig& cfg, const NoisePath& noise) {
  if (noise.channels() != c.channels())
    throw DimensionError("noise has " + std::to_string(noise.channels()) + " channels, coefficients need " +
                         std::to_string(c.channels()));
  if (noise.steps() < cfg.steps()) throw Error("noise path shorter than T/dt");
  if (std::abs(noise.dt() - cfg.dt) > 1e-12 * cfg.dt) throw Error("noise dt does not match integrator dt");
}

}  // namespace detail

/// X_i <- X_i + V(X_i, mu)dt + sqrt(eps) sum_p G(X_i, mu, p) sqrt(w_p) dB_p, mu the pre-step ensemble.
inline ParticleEnsemble step_interacting(const ParticleEnsemble& ens, const CoefficientSet& c,
                                         const IntegratorConfig& cfg, std::span<const double> increments) {
  c.check_dim(ens.dim());
  if (increments.size() != c.channels()) throw DimensionError("step_interacting: one increment per channel required");
  ParticleEnsemble out = ens;
  detail::StepWorkspace ws;
  const Vec m = c.feature_means(ens);
  detail::em_step(c, ens.atoms, m, cfg.dt, std::sqrt(cfg.epsilon), increments, out.atoms, ws);
  out.time = ens.time + cfg.dt;
  return out;
}

namespace detail {

/// Shared driver. `frozen_means`, when given, replaces the ensemble's own
/// feature means at each step (Picard mode). `means_path` receives the
/// ensemble's own means at every step 0..n-1 when non-null.
inline Trajectory integrate(const ParticleEnsemble& initial, const CoefficientSet& c, const IntegratorConfig& cfg,
                            const NoisePath* noise, const std::vector<Vec>* frozen_means,
                            std::vector<Vec>* means_path) {
  cfg.validate();
  c.check_dim(initial.dim());
  initial.validate();
  const std::size_t n = cfg.steps();
  const bool noisy = noise != nullptr && cfg.epsilon > 0.0;
  if (noise) check_noise(c, cfg, *noise);
  if (frozen_means && frozen_means->size() < n) throw Error("frozen measure path shorter than T/dt");

  Trajectory tr;
  tr.config = cfg;
  if (noise) tr.noise = noise->provenance();
  tr.snapshots.push_back(initial);
  tr.steps.push_back(0);
  if (means_path) means_path->clear();

  PointSet cur = initial.atoms, next(initial.size(), initial.dim());
  StepWorkspace ws;
  const double se = std::sqrt(cfg.epsilon);
  const Vec zero(c.channels(), 0.0);
  EmpiricalMeasure view;
  view.weights = initial.weights;
  for (std::size_t k = 0; k < n; ++k) {
    view.atoms = cur;
    Vec own = c.feature_means(view);
    const Vec& m = frozen_means ? (*frozen_means)[k] : own;
    em_step(c, cur, m, cfg.dt, noisy ? se : 0.0, noisy ? noise->step(k) : std::span<const double>(zero), next, ws,
            k);
    if (means_path) means_path->push_back(std::move(own));
    std::swap(cur, next);
    if (records_step(k + 1, n, cfg.snapshot_stride)) {
      ParticleEnsemble e;
      e.atoms = cur;
      e.weights = initial.weights;
      e.time = initial.time + static_cast<double>(k + 1) * cfg.dt;
      tr.snapshots.push_back(std::move(e));
      tr.steps.push_back(k + 1);
    }
  }
  return tr;
}

}  // namespace detail

/// Euler-Maruyama solution of the SDE with interaction (superposition solution of the SMFE).
inline Trajectory simulate(const ParticleEnsemble& initial, const CoefficientSet& c, const IntegratorConfig& cfg,
                           const NoisePath& noise) {
  return detail::integrate(initial, c, cfg, &noise, nullptr, nullptr);
}

/// Deterministic transport limit (epsilon = 0); consumes no noise.
inline Trajectory simulate_transport(const ParticleEnsemble& initial, const CoefficientSet& c, IntegratorConfig cfg) {
  cfg.epsilon = 0.0;
  return detail::integrate(initial, c, cfg, nullptr, nullptr, nullptr);
}

// ---------------------------------------------------------------------------
// Picard iteration
// ---------------------------------------------------------------------------

struct PicardResult {
  Trajectory trajectory;
  std::vector<double> gaps;  ///< gaps[n-1] = sup_t W2(mu^n_t, mu^{n-1}_t)
  bool converged = false;
};

/// Fixed-point iteration on the measure path: iterate n solves the linear SDE
/// with coefficients frozen along the measure path of iterate n-1 (iterate 0
/// is the constant path mu_0), all iterates driven by the same noise. Stops
/// when the sup over snapshots of W2 between consecutive iterates is < tol.
inline PicardResult picard_solve(const ParticleEnsemble& initial, const CoefficientSet& c, const IntegratorConfig& cfg,
                                 const NoisePath& noise, double tol, std::size_t max_iter) {
  if (!(tol > 0.0)) throw Error("picard_solve: tol must be positive");
  const std::size_t n = cfg.steps();
  std::vector<Vec> frozen(n, c.feature_means(initial));
  std::vector<Vec> own;
  // Iterate 0 as a trajectory on the same snapshot grid.
  Trajectory prev;
  prev.snapshots.clear();
  for (std::size_t k = 0; k <= n; ++k)
    if (records_step(k, n, cfg.snapshot_stride)) prev.snapshots.push_back(initial);

  PicardResult res;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    Trajectory cur = detail::integrate(initial, c, cfg, &noise, &frozen, &own);
    double gap = 0.0;
    for (std::size_t s = 0; s < cur.size(); ++s) gap = std::max(gap, w2_distance(cur.snapshots[s], prev.snapshots[s]));
    res.gaps.push_back(gap);
    frozen.swap(own);
    prev = std::move(cur);
    if (gap < tol) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged) warn("picard_solve: no contraction below tol after " + std::to_string(max_iter) + " iterations");
  res.trajectory = std::move(prev);
  return res;
}

// ---------------------------------------------------------------------------
// Initial data
// ---------------------------------------------------------------------------

struct UniformBox {
  Vec lo, hi;
};
struct TruncatedGaussian {
  Vec mean, stddev;
  Vec lo, hi;  ///< truncation box
};
struct AtomList {
  PointSet atoms;
};
using InitialSpec = std::variant<UniformBox, TruncatedGaussian, AtomList>;

/// N i.i.d. draws with weights 1/N; deterministic per seed. An explicit atom list is returned as is.
inline ParticleEnsemble sample_initial(const InitialSpec& spec, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  PointSet pts;
  if (const auto* u = std::get_if<UniformBox>(&spec)) {
    if (u->lo.size() != u->hi.size() || u->lo.empty()) throw DimensionError("UniformBox: bad bounds");
    pts = PointSet(n, u->lo.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < u->lo.size(); ++k) {
        std::uniform_real_distribution<double> ud(u->lo[k], u->hi[k]);
        pts[i][k] = ud(gen);
      }
  } else if (const auto* g = std::get_if<TruncatedGaussian>(&spec)) {
    const std::size_t d = g->mean.size();
    if (g->stddev.size() != d || g->lo.size() != d || g->hi.size() != d)
      throw DimensionError("TruncatedGaussian: bad shape");
    pts = PointSet(n, d);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        double v;
        do v = g->mean[k] + g->stddev[k] * nd(gen);
        while (!(v >= g->lo[k] && v <= g->hi[k]));
        pts[i][k] = v;
      }
  } else {
    pts = std::get<AtomList>(spec).atoms;
  }
  return ParticleEnsemble(EmpiricalMeasure::uniform(std::move(pts)), 0.0);
}

// ---------------------------------------------------------------------------
// Stochastic gradient descent
// ---------------------------------------------------------------------------

struct SgdConfig {
  double alpha = 1e-2;  ///< learning rate
  std::size_t batch = 1;
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  /// Use the exact data expectation instead of sampled batches.
  bool full_batch = false;
  std::size_t snapshot_stride = 1;
};

struct SgdResult {
  std::vector<ParticleEnsemble> snapshots;  ///< time of step n is n * alpha
  std::vector<std::size_t> steps;
};

/// Mini-batch SGD on the particle parameters in mean-field scaling:
///   x_i(n+1) = x_i(n) + (alpha/P) sum_{b in batch} [V + G](x_i(n), nu_n, theta_b),
/// with nu_n the empirical measure of the parameters. For network coefficients
/// V + G(., ., p) = (f_p - f^M(x, theta_p)) grad Phi(., theta_p), i.e. the
/// per-sample square-loss gradient rescaled by M (and by 1/2, see the README);
/// its data average is V, and its covariance per step is (alpha^2/P) Atilde,
/// matching noise scale epsilon = alpha / P on the time grid t = n alpha.
inline SgdResult run_sgd(const CoefficientSet& c, const ParticleEnsemble& initial, const SgdConfig& cfg) {
  if (!(cfg.alpha > 0.0)) throw Error("run_sgd: alpha must be positive");
  if (cfg.batch == 0) throw Error("run_sgd: batch size must be >= 1");
  if (cfg.snapshot_stride == 0) throw Error("run_sgd: snapshot stride must be positive");
  c.check_dim(initial.dim());
  const std::size_t d = c.dim(), P = c.channels();
  const auto w = c.channel_weights();
  std::mt19937_64 gen(cfg.seed);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());

  SgdResult res;
  res.snapshots.push_back(initial);
  res.steps.push_back(0);
  ParticleEnsemble cur = initial;
  PointSet next(cur.size(), d);
  Vec v(d), g(P * d), coef(P);
  for (std::size_t n = 0; n < cfg.steps; ++n) {
    std::fill(coef.begin(), coef.end(), 0.0);
    if (cfg.full_batch) {
      for (std::size_t p = 0; p < P; ++p) coef[p] = w[p];
    } else {
      for (std::size_t b = 0; b < cfg.batch; ++b) coef[pick(gen)] += 1.0 / static_cast<double>(cfg.batch);
    }
    const Vec m = c.feature_means(cur);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const auto x = cur.atoms[i];
      auto y = next[i];
      c.drift_and_noise(x, m, v, g);
      for (std::size_t j = 0; j < d; ++j) y[j] = x[j];
      for (std::size_t p = 0; p < P; ++p) {
        if (coef[p] == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) y[j] += cfg.alpha * coef[p] * (v[j] + g[p * d + j]);
      }
      if (!all_finite(y))
        throw DivergenceError("SGD diverged at step " + std::to_string(n + 1) + ", particle " + std::to_string(i));
    }
    std::swap(cur.atoms, next);
    cur.time = static_cast<double>(n + 1) * cfg.alpha;
    if (records_step(n + 1, cfg.steps, cfg.snapshot_stride)) {
      res.snapshots.push_back(cur);
      res.steps.push_back(n + 1);
    }
  }
  return res;
}

}  // namespace smfe
