#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "smfe/core.hpp"
#include "smfe/measure.hpp"

namespace smfe {

/// Minimum-cost perfect matching on a dense n x n cost matrix (shortest
/// augmenting path Hungarian method, O(n^3)). Returns row -> column.
/// Rows are inserted in index order and columns scanned in index order with
/// strict comparisons, so ties resolve to the lowest index.
inline std::vector<std::size_t> solve_assignment(const Matrix& cost, double* total = nullptr) {
  const std::size_t n = cost.rows;
  if (cost.cols != n) throw Error("solve_assignment: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      const double* row = cost.a.data() + (i0 - 1) * n;
      const double ui0 = u[i0];
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - ui0 - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> match(n);
  for (std::size_t j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
  if (total) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += cost(i, match[i]);
    *total = s;
  }
  return match;
}

enum class W2Backend { Auto, Assignment, Quantile, Entropic };

struct W2Options {
  W2Backend backend = W2Backend::Auto;
  /// Largest (expanded) cardinality solved by exact assignment.
  std::size_t assignment_limit = 2000;
  /// Entropic regularisation as a fraction of the squared joint diameter.
  double entropic_scale = 1e-3;
  int sinkhorn_max_iter = 5000;
  double sinkhorn_tol = 1e-10;
};

struct W2Result {
  double value = 0.0;     ///< W_2 (not squared)
  W2Backend backend = W2Backend::Assignment;
  bool exact = true;
  double regularization = 0.0;  ///< entropic epsilon; 0 for exact backends
};

inline const char* to_string(W2Backend b) {
  switch (b) {
    case W2Backend::Auto: return "auto";
    case W2Backend::Assignment: return "assignment";
    case W2Backend::Quantile: return "quantile";
    case W2Backend::Entropic: return "entropic";
  }
  return "?";
}

namespace detail {

inline void check_pair(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.size() == 0 || nu.size() == 0) throw Error("w2: empty measure");
  if (mu.dim() != nu.dim()) throw DimensionError("w2: dimension mismatch");
}

/// Exact W2^2 in one dimension by monotone (quantile) coupling; any weights.
inline double w2_squared_quantile(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  auto order = [](const EmpiricalMeasure& m) {
    std::vector<std::size_t> idx(m.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m.atoms[a][0] < m.atoms[b][0]; });
    return idx;
  };
  const auto ia = order(mu), ib = order(nu);
  std::size_t i = 0, j = 0;
  double ra = mu.weights[ia[0]], rb = nu.weights[ib[0]];
  double s = 0.0;
  while (i < ia.size() && j < ib.size()) {
    const double m = std::min(ra, rb);
    const double diff = mu.atoms[ia[i]][0] - nu.atoms[ib[j]][0];
    s += m * diff * diff;
    ra -= m;
    rb -= m;
    // Advance whichever side is exhausted; a relative tolerance absorbs rounding.
    if (ra <= 1e-15) {
      if (++i < ia.size()) ra = mu.weights[ia[i]];
    }
    if (rb <= 1e-15) {
      if (++j < ib.size()) rb = nu.weights[ib[j]];
    }
  }
  return s;
}

/// Exact W2^2 between uniform measures of sizes n, m by assignment on the
/// lcm(n, m)-fold replicated problem.
inline double w2_squared_assignment(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  const std::size_t n = mu.size(), m = nu.size();
  const std::size_t L = std::lcm(n, m);
  const std::size_t ra = L / n, rb = L / m;
  Matrix c(L, L);
  for (std::size_t i = 0; i < L; ++i) {
    const auto x = mu.atoms[i / ra];
    for (std::size_t j = 0; j < L; ++j) c(i, j) = squared_distance(x, nu.atoms[j / rb]);
  }
  double total = 0.0;
  solve_assignment(c, &total);
  return total / static_cast<double>(L);
}

/// Log-domain Sinkhorn; returns <C, P_eps>.
inline double w2_squared_entropic(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double eps, int max_iter,
                                  double tol) {
  const std::size_t n = mu.size(), m = nu.size();
  Matrix c(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) c(i, j) = squared_distance(mu.atoms[i], nu.atoms[j]);
  Vec f(n, 0.0), g(m, 0.0), la(n), lb(m);
  for (std::size_t i = 0; i < n; ++i) la[i] = std::log(mu.weights[i]);
  for (std::size_t j = 0; j < m; ++j) lb[j] = std::log(nu.weights[j]);
  auto lse = [](const Vec& t) {
    const double mx = *std::max_element(t.begin(), t.end());
    double s = 0.0;
    for (double v : t) s += std::exp(v - mx);
    return mx + std::log(s);
  };
  Vec tmp_m(m), tmp_n(n);
  for (int it = 0; it < max_iter; ++it) {
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) tmp_m[j] = (g[j] - c(i, j)) / eps + lb[j];
      const double nf = -eps * lse(tmp_m);
      change = std::max(change, std::abs(nf - f[i]));
      f[i] = nf;
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) tmp_n[i] = (f[i] - c(i, j)) / eps + la[i];
      const double ng = -eps * lse(tmp_n);
      change = std::max(change, std::abs(ng - g[j]));
      g[j] = ng;
    }
    if (change < tol) break;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double pij = std::exp((f[i] + g[j] - c(i, j)) / eps + la[i] + lb[j]);
      s += pij * c(i, j);
    }
  return s;
}

inline double joint_diameter_sq(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  const std::size_t d = mu.dim();
  Vec lo(d, std::numeric_limits<double>::infinity()), hi(d, -std::numeric_limits<double>::infinity());
  for (const auto* m : {&mu, &nu})
    for (std::size_t i = 0; i < m->size(); ++i)
      for (std::size_t k = 0; k < d; ++k) {
        lo[k] = std::min(lo[k], m->atoms[i][k]);
        hi[k] = std::max(hi[k], m->atoms[i][k]);
      }
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += (hi[k] - lo[k]) * (hi[k] - lo[k]);
  return s;
}

}  // namespace detail

/// Wasserstein-2 distance between empirical measures.
///
/// Auto backend: d = 1 -> quantile coupling (exact, any weights); uniform
/// weights with lcm(n, m) <= assignment_limit -> exact assignment; otherwise
/// entropic (Sinkhorn) with eps = entropic_scale * diameter^2, reported in the result.
inline W2Result w2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const W2Options& opt = {}) {
  detail::check_pair(mu, nu);
  W2Backend b = opt.backend;
  const bool uniform = mu.has_uniform_weights() && nu.has_uniform_weights();
  const std::size_t L = std::lcm(mu.size(), nu.size());
  if (b == W2Backend::Auto) {
    if (mu.dim() == 1)
      b = W2Backend::Quantile;
    else if (uniform && L <= opt.assignment_limit)
      b = W2Backend::Assignment;
    else
      b = W2Backend::Entropic;
  }
  W2Result r;
  r.backend = b;
  switch (b) {
    case W2Backend::Quantile:
      if (mu.dim() != 1) throw Error("w2: quantile backend needs d = 1");
      r.value = std::sqrt(std::max(0.0, detail::w2_squared_quantile(mu, nu)));
      break;
    case W2Backend::Assignment:
      if (!uniform) throw Error("w2: assignment backend needs uniform weights");
      r.value = std::sqrt(std::max(0.0, detail::w2_squared_assignment(mu, nu)));
      break;
    case W2Backend::Entropic: {
      const double diam2 = detail::joint_diameter_sq(mu, nu);
      r.regularization = opt.entropic_scale * std::max(diam2, 1e-300);
      r.exact = false;
      r.value = std::sqrt(std::max(
          0.0, detail::w2_squared_entropic(mu, nu, r.regularization, opt.sinkhorn_max_iter, opt.sinkhorn_tol)));
      break;
    }
    case W2Backend::Auto: break;
  }
  return r;
}

inline double w2_distance(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const W2Options& opt = {}) {
  return w2(mu, nu, opt).value;
}

/// Exact W2^2 between a one-dimensional empirical measure and the uniform law on [lo, hi].
inline double w2_squared_to_uniform(const EmpiricalMeasure& mu, double lo, double hi) {
  if (mu.size() == 0) throw Error("w2: empty measure");
  if (mu.dim() != 1) throw DimensionError("w2_squared_to_uniform: needs d = 1");
  if (!(hi > lo)) throw Error("w2_squared_to_uniform: empty interval");
  std::vector<std::size_t> idx(mu.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mu.atoms[a][0] < mu.atoms[b][0]; });
  const double L = hi - lo;
  double u = 0.0, s = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double x = mu.atoms[idx[k]][0];
    const double u1 = (k + 1 == idx.size()) ? 1.0 : u + mu.weights[idx[k]];
    // integral over [u, u1] of (x - lo - L v)^2 dv
    const double a = x - lo - L * u, b = x - lo - L * u1;
    s += (a * a * a - b * b * b) / (3.0 * L);
    u = u1;
  }
  return s;
}

}  // namespace smfe
