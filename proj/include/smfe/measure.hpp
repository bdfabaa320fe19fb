#pragma once

#include <cmath>
#include <numeric>
#include <string>

#include "smfe/core.hpp"

namespace smfe {

/// Weighted atoms in R^d; the weights form a probability vector.
struct EmpiricalMeasure {
  PointSet atoms;
  Vec weights;

  EmpiricalMeasure() = default;
  EmpiricalMeasure(PointSet a, Vec w) : atoms(std::move(a)), weights(std::move(w)) { validate(); }

  /// Uniform weights 1/N on the given atoms.
  static EmpiricalMeasure uniform(PointSet a) {
    const std::size_t n = a.size();
    if (n == 0) throw Error("EmpiricalMeasure: empty atom set");
    return EmpiricalMeasure(std::move(a), Vec(n, 1.0 / static_cast<double>(n)));
  }

  std::size_t size() const { return atoms.size(); }
  std::size_t dim() const { return atoms.dim(); }

  void validate() const {
    if (atoms.size() == 0) throw Error("EmpiricalMeasure: empty atom set");
    if (weights.size() != atoms.size()) throw DimensionError("EmpiricalMeasure: weights/atoms size mismatch");
    double s = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw Error("EmpiricalMeasure: weights must be positive");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-12) throw Error("EmpiricalMeasure: weights must sum to 1");
  }

  /// Total mass, summed in index order.
  double mass() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

  bool has_uniform_weights() const {
    for (double w : weights)
      if (w != weights.front()) return false;
    return true;
  }
};

/// The computational avatar of mu_t: an empirical measure with a clock.
struct ParticleEnsemble : EmpiricalMeasure {
  double time = 0.0;

  ParticleEnsemble() = default;
  ParticleEnsemble(EmpiricalMeasure m, double t = 0.0) : EmpiricalMeasure(std::move(m)), time(t) {}
};

/// <|x|^p, mu> for p in {2, 4}.
inline double moment(const EmpiricalMeasure& mu, int p) {
  if (p != 2 && p != 4) throw Error("moment: p must be 2 or 4");
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const auto x = mu.atoms[i];
    const double r2 = dot(x, x);
    s += mu.weights[i] * (p == 2 ? r2 : r2 * r2);
  }
  return s;
}

}  // namespace smfe
