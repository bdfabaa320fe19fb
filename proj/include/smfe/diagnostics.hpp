#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "smfe/coefficients.hpp"
#include "smfe/core.hpp"
#include "smfe/dynamics.hpp"
#include "smfe/measure.hpp"
#include "smfe/test_functions.hpp"

namespace smfe {

namespace detail {

inline void require_every_step(const Trajectory& tr, const char* who) {
  if (tr.size() != tr.config.steps() + 1) throw Error(std::string(who) + ": trajectory must be stored at every step");
}

inline void require_noise(const Trajectory& tr, const NoisePath* noise, const char* who) {
  if (tr.config.epsilon == 0.0) return;
  if (!noise) throw Error(std::string(who) + ": noisy trajectory needs its noise path");
  if (!tr.noise.present || tr.noise != noise->provenance())
    throw Error(std::string(who) + ": noise does not match the trajectory provenance");
}

/// Per-step pieces of the Ito expansion of <phi, mu_s> for a batch of test functions.
struct ItoTerms {
  Vec drift;       ///< <grad phi . V, mu> + (eps/2) <D^2 phi : A, mu>
  Vec transport;   ///< <grad phi . V, mu>
  Vec second;      ///< <D^2 phi : A, mu>
  std::vector<Vec> noise;  ///< [f][p] = <grad phi . G_p, mu>
};

inline void ito_terms(const CoefficientSet& c, const EmpiricalMeasure& mu, const std::vector<TestFunction>& panel,
                      double eps, ItoTerms& out) {
  const std::size_t d = c.dim(), P = c.channels(), F = panel.size();
  const auto w = c.channel_weights();
  const Vec means = c.feature_means(mu);
  out.drift.assign(F, 0.0);
  out.transport.assign(F, 0.0);
  out.second.assign(F, 0.0);
  out.noise.assign(F, Vec(P, 0.0));
  Vec v(d), g(P * d), grad(d), hg(d);
  Matrix hess(d, d);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const auto x = mu.atoms[i];
    const double om = mu.weights[i];
    c.drift_and_noise(x, means, v, g);
    for (std::size_t f = 0; f < F; ++f) {
      panel[f].gradient(x, grad);
      panel[f].hessian(x, hess.a);
      out.transport[f] += om * dot(grad, v);
      double tr = 0.0;
      for (std::size_t p = 0; p < P; ++p) {
        const std::span<const double> gp(g.data() + p * d, d);
        std::fill(hg.begin(), hg.end(), 0.0);
        gemv_add(hess, gp, hg);
        tr += w[p] * dot(gp, hg);
        out.noise[f][p] += om * dot(grad, gp);
      }
      out.second[f] += om * tr;
    }
  }
  for (std::size_t f = 0; f < F; ++f) out.drift[f] = out.transport[f] + 0.5 * eps * out.second[f];
}

}  // namespace detail

/// Weak-form residual of the stochastic mean-field equation for each test function:
///   R(phi) = <phi, mu_T> - <phi, mu_0> - sum_s [<grad phi . V, mu_s> + (eps/2) <D^2 phi : A, mu_s>] dt
///            - sqrt(eps) sum_s sum_p <grad phi . G_p, mu_s> sqrt(w_p) dB_p
/// with D^2 phi : A = sum_p w_p G_p^T D^2 phi G_p. Left-point quadrature; the
/// trajectory must be stored at every step. `noise` may be null when eps = 0.
inline Vec smfe_weak_residual(const Trajectory& tr, const NoisePath* noise, const CoefficientSet& c,
                              const std::vector<TestFunction>& panel) {
  detail::require_every_step(tr, "smfe_weak_residual");
  detail::require_noise(tr, noise, "smfe_weak_residual");
  const double eps = tr.config.epsilon, dt = tr.config.dt, se = std::sqrt(eps);
  const std::size_t n = tr.config.steps(), F = panel.size(), P = c.channels();
  const auto w = c.channel_weights();
  auto value = [&](const EmpiricalMeasure& mu, const TestFunction& phi) {
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) s += mu.weights[i] * phi(mu.atoms[i]);
    return s;
  };
  Vec res(F);
  for (std::size_t f = 0; f < F; ++f) res[f] = value(tr.final(), panel[f]) - value(tr.initial(), panel[f]);
  detail::ItoTerms terms;
  for (std::size_t s = 0; s < n; ++s) {
    detail::ito_terms(c, tr.snapshots[s], panel, eps, terms);
    for (std::size_t f = 0; f < F; ++f) {
      double m = 0.0;
      if (eps > 0.0) {
        const auto dB = noise->step(s);
        for (std::size_t p = 0; p < P; ++p) m += terms.noise[f][p] * std::sqrt(w[p]) * dB[p];
      }
      res[f] -= terms.drift[f] * dt + se * m;
    }
  }
  return res;
}

inline double smfe_weak_residual(const Trajectory& tr, const NoisePath* noise, const CoefficientSet& c,
                                 const TestFunction& phi) {
  return smfe_weak_residual(tr, noise, c, std::vector<TestFunction>{phi})[0];
}

struct QvResult {
  double realized = 0.0;
  double predicted = 0.0;
};

/// Realized quadratic variation of <phi, mu_t> over steps [begin, end), after
/// removing the Ito drift, against eps * sum_s sum_p w_p <grad phi . G_p, mu_s>^2 dt.
/// `end = 0` means the whole trajectory.
inline QvResult qv_check(const Trajectory& tr, const CoefficientSet& c, const TestFunction& phi,
                         std::size_t begin = 0, std::size_t end = 0) {
  detail::require_every_step(tr, "qv_check");
  const std::size_t n = tr.config.steps();
  if (end == 0) end = n;
  if (begin >= end || end > n) throw Error("qv_check: bad window");
  const double eps = tr.config.epsilon, dt = tr.config.dt;
  const auto w = c.channel_weights();
  const std::vector<TestFunction> panel{phi};
  detail::ItoTerms terms;
  auto value = [&](const EmpiricalMeasure& mu) {
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) s += mu.weights[i] * phi(mu.atoms[i]);
    return s;
  };
  QvResult r;
  double prev = value(tr.snapshots[begin]);
  for (std::size_t s = begin; s < end; ++s) {
    detail::ito_terms(c, tr.snapshots[s], panel, eps, terms);
    const double next = value(tr.snapshots[s + 1]);
    const double inc = next - prev - terms.drift[0] * dt;
    r.realized += inc * inc;
    double q = 0.0;
    for (std::size_t p = 0; p < w.size(); ++p) q += w[p] * terms.noise[0][p] * terms.noise[0][p];
    r.predicted += eps * q * dt;
    prev = next;
  }
  return r;
}

/// F_n(mu) = sum over ordered n-tuples of atoms of prod w * prod_{a<b} |z^a - z^b|^2.
/// Tuples with a repeated atom contribute zero, so the sum runs over
/// increasing index tuples times n!. Vanishes exactly on measures with at most
/// n - 1 distinct atoms.
inline double f_n_functional(const EmpiricalMeasure& mu, int n) {
  if (n < 2 || n > 4) throw Error("f_n_functional: n must be 2, 3 or 4");
  const std::size_t N = mu.size();
  const std::size_t budget[] = {0, 0, 100000, 5000, 200};
  if (N > budget[n])
    throw Error("f_n_functional: budget exceeded (N = " + std::to_string(N) + ", limit " +
                std::to_string(budget[n]) + " for n = " + std::to_string(n) + ")");
  Matrix dist(N, N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) dist(i, j) = squared_distance(mu.atoms[i], mu.atoms[j]);
  const auto& w = mu.weights;
  double s = 0.0;
  if (n == 2) {
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = i + 1; j < N; ++j) s += w[i] * w[j] * dist(i, j);
    return 2.0 * s;
  }
  if (n == 3) {
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = i + 1; j < N; ++j) {
        const double pij = w[i] * w[j] * dist(i, j);
        if (pij == 0.0) continue;
        for (std::size_t k = j + 1; k < N; ++k) s += pij * w[k] * dist(i, k) * dist(j, k);
      }
    return 6.0 * s;
  }
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j) {
      const double pij = w[i] * w[j] * dist(i, j);
      if (pij == 0.0) continue;
      for (std::size_t k = j + 1; k < N; ++k) {
        const double pijk = pij * w[k] * dist(i, k) * dist(j, k);
        if (pijk == 0.0) continue;
        for (std::size_t l = k + 1; l < N; ++l) s += pijk * w[l] * dist(i, l) * dist(j, l) * dist(k, l);
      }
    }
  return 24.0 * s;
}

struct PairwiseReport {
  Vec curve;  ///< per snapshot minimum distance over initially distinct pairs
  double initial = 0.0;
  double minimum = 0.0;
  double ratio = 0.0;  ///< minimum / initial
  bool collision = false;
};

/// Minimum distance over pairs of initially distinct particles, per snapshot.
inline PairwiseReport min_pairwise_distance(const Trajectory& tr) {
  const auto& x0 = tr.initial().atoms;
  const std::size_t N = x0.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j)
      if (squared_distance(x0[i], x0[j]) > 0.0) pairs.emplace_back(i, j);
  if (pairs.empty()) throw Error("min_pairwise_distance: need at least two distinct initial atoms");
  PairwiseReport r;
  r.minimum = std::numeric_limits<double>::infinity();
  for (const auto& snap : tr.snapshots) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& [i, j] : pairs) m = std::min(m, squared_distance(snap.atoms[i], snap.atoms[j]));
    m = std::sqrt(m);
    r.curve.push_back(m);
    r.minimum = std::min(r.minimum, m);
  }
  r.initial = r.curve.front();
  r.ratio = r.minimum / r.initial;
  if (r.minimum == 0.0) {
    r.collision = true;
    warn("min_pairwise_distance: exact collision of initially distinct particles");
  }
  return r;
}

struct MomentReport {
  double sup = 0.0;
  double initial = 0.0;
  double ratio = 0.0;  ///< sup / (1 + initial)
};

inline MomentReport moment_track(const Trajectory& tr, int p) {
  MomentReport r;
  r.initial = moment(tr.initial(), p);
  for (const auto& s : tr.snapshots) r.sup = std::max(r.sup, moment(s, p));
  r.ratio = r.sup / (1.0 + r.initial);
  return r;
}

/// True when every snapshot carries the initial weight vector unchanged.
inline bool weights_conserved(const Trajectory& tr) {
  for (const auto& s : tr.snapshots)
    if (s.weights != tr.initial().weights) return false;
  return true;
}

/// Largest |<1, mu_t> - 1| over the snapshots.
inline double mass_defect(const Trajectory& tr) {
  double m = 0.0;
  for (const auto& s : tr.snapshots) m = std::max(m, std::abs(s.mass() - 1.0));
  return m;
}

struct DiagnosticRow {
  std::string subject;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

inline void write_report(std::ostream& out, const std::vector<DiagnosticRow>& rows) {
  out << "subject,seed,metric,value\n";
  const auto prec = out.precision(17);
  for (const auto& r : rows) out << r.subject << ',' << r.seed << ',' << r.metric << ',' << r.value << '\n';
  out.precision(prec);
}

}  // namespace smfe
