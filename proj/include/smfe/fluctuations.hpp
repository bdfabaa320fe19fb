#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "smfe/coefficients.hpp"
#include "smfe/core.hpp"
#include "smfe/dynamics.hpp"
#include "smfe/fields.hpp"
#include "smfe/measure.hpp"
#include "smfe/test_functions.hpp"

namespace smfe {

/// Transport base points X0_i(t) with tangent vectors Y_i(t).
///
/// <phi, eta_t> = sum_i w_i grad phi(X0_i) . Y_i. The tangent vectors are the
/// derivative of the noisy particle flow with respect to sqrt(epsilon) at 0.
struct TangentEnsemble {
  PointSet base;
  PointSet tangents;
  Vec weights;
  double time = 0.0;

  std::size_t size() const { return base.size(); }
  std::size_t dim() const { return base.dim(); }

  ParticleEnsemble base_measure() const { return ParticleEnsemble(EmpiricalMeasure(base, weights), time); }
  SignedField field() const { return SignedField::tangent(base, tangents, weights); }

  /// Zero tangents on the atoms of `mu`.
  static TangentEnsemble at_rest(const ParticleEnsemble& mu) {
    TangentEnsemble t;
    t.base = mu.atoms;
    t.tangents = PointSet(mu.size(), mu.dim());
    t.weights = mu.weights;
    t.time = mu.time;
    return t;
  }
};

struct TangentPath {
  IntegratorConfig config;
  NoiseProvenance noise;
  double forcing_scale = 1.0;
  std::vector<TangentEnsemble> snapshots;
  std::vector<std::size_t> steps;

  std::size_t size() const { return snapshots.size(); }
  const TangentEnsemble& final() const { return snapshots.back(); }
};

namespace detail {

struct TangentWorkspace {
  Vec means, dm, v, g, b, gb, a, scaled;
  Matrix jac;
};

/// Advances base points by one transport step and tangents by the linearised
/// step; both read the same pre-step state.
inline void tangent_step_into(const CoefficientSet& c, const TangentEnsemble& in, double dt, double forcing,
                              std::span<const double> dB, TangentEnsemble& out, TangentWorkspace& ws,
                              std::size_t step_index) {
  const std::size_t d = c.dim(), K = c.num_features(), P = c.channels(), N = in.size();
  const auto w = c.channel_weights();
  // Feature means and their first variation along Y.
  ws.means.assign(K, 0.0);
  ws.dm.assign(K, 0.0);
  ws.b.resize(K);
  ws.gb.resize(K * d);
  for (std::size_t j = 0; j < N; ++j) {
    const auto x = in.base[j];
    const auto y = in.tangents[j];
    c.features(x, ws.b);
    c.feature_gradients(x, ws.gb);
    for (std::size_t k = 0; k < K; ++k) {
      ws.means[k] += in.weights[j] * ws.b[k];
      ws.dm[k] += in.weights[j] * dot(std::span<const double>(ws.gb.data() + k * d, d), y);
    }
  }
  ws.v.resize(d);
  ws.g.resize(P * d);
  ws.a.resize(K * d);
  ws.scaled.resize(P);
  for (std::size_t p = 0; p < P; ++p) ws.scaled[p] = forcing * std::sqrt(w[p]) * dB[p];
  if (out.base.size() != N || out.base.dim() != d) {
    out.base = PointSet(N, d);
    out.tangents = PointSet(N, d);
  }
  out.weights = in.weights;
  out.time = in.time + dt;
  for (std::size_t i = 0; i < N; ++i) {
    const auto x = in.base[i];
    const auto y = in.tangents[i];
    auto xo = out.base[i];
    auto yo = out.tangents[i];
    c.drift_and_noise(x, ws.means, ws.v, ws.g);
    ws.jac = c.drift_jacobian(x, ws.means);
    if (K) c.interaction_vectors(x, ws.a);
    for (std::size_t r = 0; r < d; ++r) {
      xo[r] = x[r] + ws.v[r] * dt;
      double lin = 0.0;
      for (std::size_t s = 0; s < d; ++s) lin += ws.jac(r, s) * y[s];
      for (std::size_t k = 0; k < K; ++k) lin += ws.a[k * d + r] * ws.dm[k];
      double f = 0.0;
      for (std::size_t p = 0; p < P; ++p) f += ws.g[p * d + r] * ws.scaled[p];
      yo[r] = y[r] + lin * dt + f;
    }
    if (!all_finite(xo) || !all_finite(yo))
      throw DivergenceError("non-finite tangent state at step " + std::to_string(step_index + 1) + ", particle " +
                            std::to_string(i));
  }
}

}  // namespace detail

/// One step of the linear fluctuation system:
///   Y_i <- Y_i + [D_x V(X0_i, mu0) Y_i + sum_k a_k(X0_i) <grad b_k . Y, mu0>] dt + s sum_p G(X0_i, mu0, p) sqrt(w_p) dB_p
/// with X0 advanced by the transport step. `forcing` is the scale s of the noise term.
inline TangentEnsemble tangent_step(const TangentEnsemble& t, const CoefficientSet& c, const IntegratorConfig& cfg,
                                    std::span<const double> increments, double forcing = 1.0) {
  c.check_dim(t.dim());
  if (increments.size() != c.channels()) throw DimensionError("tangent_step: one increment per channel required");
  TangentEnsemble out;
  detail::TangentWorkspace ws;
  detail::tangent_step_into(c, t, cfg.dt, forcing, increments, out, ws, 0);
  return out;
}

/// Solves the transport path and the tangent system together from `initial`,
/// driven by `noise`. Initial tangents default to zero.
inline TangentPath simulate_tangent(const TangentEnsemble& initial, const CoefficientSet& c,
                                    const IntegratorConfig& cfg, const NoisePath& noise, double forcing = 1.0) {
  cfg.validate();
  c.check_dim(initial.dim());
  detail::check_noise(c, cfg, noise);
  if (initial.tangents.size() != initial.size()) throw DimensionError("simulate_tangent: tangent count mismatch");
  const std::size_t n = cfg.steps();
  TangentPath path;
  path.config = cfg;
  path.noise = noise.provenance();
  path.forcing_scale = forcing;
  path.snapshots.push_back(initial);
  path.steps.push_back(0);
  TangentEnsemble cur = initial, next;
  detail::TangentWorkspace ws;
  for (std::size_t k = 0; k < n; ++k) {
    detail::tangent_step_into(c, cur, cfg.dt, forcing, noise.step(k), next, ws, k);
    std::swap(cur, next);
    if (records_step(k + 1, n, cfg.snapshot_stride)) {
      path.snapshots.push_back(cur);
      path.steps.push_back(k + 1);
    }
  }
  return path;
}

inline TangentPath simulate_tangent(const ParticleEnsemble& initial, const CoefficientSet& c,
                                    const IntegratorConfig& cfg, const NoisePath& noise, double forcing = 1.0) {
  return simulate_tangent(TangentEnsemble::at_rest(initial), c, cfg, noise, forcing);
}

namespace detail {

inline void check_same_grid(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a != b) throw Error("snapshot grids do not match");
}

}  // namespace detail

/// eta^eps = (mu^eps - mu^0) / sqrt(eps) as an atomic field.
inline SignedField eta_eps(const EmpiricalMeasure& noisy, const EmpiricalMeasure& base, double eps) {
  if (!(eps > 0.0)) throw Error("eta_eps: epsilon must be positive");
  if (noisy.size() != base.size()) throw DimensionError("eta_eps: ensembles must share their atoms");
  return SignedField::difference(noisy, base, 1.0 / std::sqrt(eps));
}

/// Fluctuation field path over a coupled pair of trajectories.
inline std::vector<SignedField> eta_eps(const Trajectory& noisy, const Trajectory& base, double eps) {
  detail::check_same_grid(noisy.steps, base.steps);
  if (std::abs(noisy.config.dt - base.config.dt) > 1e-15) throw Error("eta_eps: time steps differ");
  std::vector<SignedField> out;
  out.reserve(noisy.size());
  for (std::size_t s = 0; s < noisy.size(); ++s) out.push_back(eta_eps(noisy.snapshots[s], base.snapshots[s], eps));
  return out;
}

struct CltDistance {
  double sup = 0.0;  ///< sup over snapshots of the H^{-J} distance (not squared)
  Vec curve;
  bool tail_warning = false;
};

/// Per-snapshot ||eta^eps_t - eta_t||_{-J} for a noisy trajectory coupled to a tangent path.
inline CltDistance clt_distance(const Trajectory& noisy, const TangentPath& tangent, double eps,
                                const SpectralGrid& grid) {
  detail::check_same_grid(noisy.steps, tangent.steps);
  CltDistance res;
  for (std::size_t s = 0; s < noisy.size(); ++s) {
    const auto& t = tangent.snapshots[s];
    SignedField diff = eta_eps(noisy.snapshots[s], t.base_measure(), eps) - t.field();
    const auto r = sobolev_neg_norm(diff, grid);
    res.curve.push_back(r.norm);
    res.sup = std::max(res.sup, r.norm);
    res.tail_warning = res.tail_warning || r.tail_warning;
  }
  return res;
}

/// Weak-form residual of the linear fluctuation equation for each test function:
///   R(phi) = <phi, eta_T> - <phi, eta_0>
///            - sum_s [<grad phi . V(., mu0_s), eta_s> + <grad phi . sum_k a_k <grad b_k . Y_s, mu0_s>, mu0_s>] dt
///            - s sum_s sum_p <grad phi . G(., mu0_s, p), mu0_s> sqrt(w_p) dB_p,
/// where <grad phi . v, eta> = sum_i w_i [D^2 phi v + (Dv)^T grad phi](X0_i) . Y_i. Left-point quadrature.
/// The path must be stored at every step and driven by `noise`.
inline Vec weak_residual_linear(const TangentPath& path, const CoefficientSet& c, const NoisePath& noise,
                                const std::vector<TestFunction>& panel) {
  if (path.noise != noise.provenance()) throw Error("weak_residual_linear: noise does not match the tangent path");
  const std::size_t n = path.config.steps();
  if (path.size() != n + 1) throw Error("weak_residual_linear: tangent path must be stored at every step");
  const std::size_t d = c.dim(), K = c.num_features(), P = c.channels(), F = panel.size();
  const auto w = c.channel_weights();
  const double dt = path.config.dt;

  auto pairing = [&](const TangentEnsemble& t, const TestFunction& phi) {
    return pair(t.field(), phi);
  };
  Vec res(F);
  for (std::size_t f = 0; f < F; ++f) res[f] = pairing(path.snapshots[n], panel[f]) - pairing(path.snapshots[0], panel[f]);

  Vec b(K), gb(K * d), dm(K), means(K), v(d), g(P * d), a(K * d), grad(d), hv(d), stoch(P);
  Matrix hess(d, d), jac;
  for (std::size_t s = 0; s < n; ++s) {
    const auto& t = path.snapshots[s];
    std::fill(means.begin(), means.end(), 0.0);
    std::fill(dm.begin(), dm.end(), 0.0);
    for (std::size_t j = 0; j < t.size(); ++j) {
      c.features(t.base[j], b);
      c.feature_gradients(t.base[j], gb);
      for (std::size_t k = 0; k < K; ++k) {
        means[k] += t.weights[j] * b[k];
        dm[k] += t.weights[j] * dot(std::span<const double>(gb.data() + k * d, d), t.tangents[j]);
      }
    }
    const auto dB = noise.step(s);
    for (std::size_t p = 0; p < P; ++p) stoch[p] = path.forcing_scale * std::sqrt(w[p]) * dB[p];
    Vec drift_term(F, 0.0), noise_term(F, 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto x = t.base[i];
      const auto y = t.tangents[i];
      c.drift_and_noise(x, means, v, g);
      jac = c.drift_jacobian(x, means);
      if (K) c.interaction_vectors(x, a);
      // Feedback direction sum_k a_k(x) dm_k.
      Vec fb(d, 0.0);
      for (std::size_t k = 0; k < K; ++k) axpy(dm[k], std::span<const double>(a.data() + k * d, d), fb);
      for (std::size_t f = 0; f < F; ++f) {
        panel[f].gradient(x, grad);
        panel[f].hessian(x, hess.a);
        // D^2 phi v . y + grad phi . (Dv y)
        double lin = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
          double hvr = 0.0, jy = 0.0;
          for (std::size_t q = 0; q < d; ++q) {
            hvr += hess(r, q) * v[q];
            jy += jac(r, q) * y[q];
          }
          lin += hvr * y[r] + grad[r] * jy;
        }
        drift_term[f] += t.weights[i] * (lin + dot(grad, fb));
        double nz = 0.0;
        for (std::size_t p = 0; p < P; ++p) nz += dot(grad, std::span<const double>(g.data() + p * d, d)) * stoch[p];
        noise_term[f] += t.weights[i] * nz;
      }
    }
    for (std::size_t f = 0; f < F; ++f) res[f] -= drift_term[f] * dt + noise_term[f];
  }
  return res;
}

}  // namespace smfe
