#pragma once

#include <algorithm>
#include <functional>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include "smfe/core.hpp"
#include "smfe/measure.hpp"
#include "smfe/test_functions.hpp"

namespace smfe {

enum class Representation { Empty, Atomic, Tangent, Mixed };

inline const char* to_string(Representation r) {
  switch (r) {
    case Representation::Empty: return "empty";
    case Representation::Atomic: return "atomic";
    case Representation::Tangent: return "tangent";
    case Representation::Mixed: return "mixed";
  }
  return "?";
}

/// Signed distribution made of
///   - atoms with signed weights:      phi -> sum_i s_i phi(X_i)
///   - tangent pairs (base, vector):   phi -> sum_i w_i grad phi(X_i) . Y_i
/// Either part may be empty. A pure tangent field always has <1, eta> = 0.
struct SignedField {
  PointSet atoms;
  Vec atom_weights;
  PointSet base;
  PointSet tangents;
  Vec tangent_weights;

  static SignedField atomic(PointSet a, Vec w) {
    if (a.size() != w.size()) throw DimensionError("SignedField: atoms/weights size mismatch");
    SignedField f;
    f.atoms = std::move(a);
    f.atom_weights = std::move(w);
    return f;
  }

  /// Tangent representation; weight 1/N per pair unless given.
  static SignedField tangent(PointSet b, PointSet y, Vec weights = {}) {
    if (b.size() != y.size() || b.dim() != y.dim()) throw DimensionError("SignedField: base/tangent shape mismatch");
    SignedField f;
    const std::size_t n = b.size();
    f.base = std::move(b);
    f.tangents = std::move(y);
    if (weights.empty())
      f.tangent_weights.assign(n, n ? 1.0 / static_cast<double>(n) : 0.0);
    else if (weights.size() != n)
      throw DimensionError("SignedField: tangent weights size mismatch");
    else
      f.tangent_weights = std::move(weights);
    return f;
  }

  /// mu - nu as an atomic field.
  static SignedField difference(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double scale = 1.0) {
    if (mu.dim() != nu.dim()) throw DimensionError("SignedField: dimension mismatch");
    SignedField f;
    f.atoms = mu.atoms;
    f.atom_weights = mu.weights;
    for (double& w : f.atom_weights) w *= scale;
    for (std::size_t i = 0; i < nu.size(); ++i) {
      f.atoms.push_back(nu.atoms[i]);
      f.atom_weights.push_back(-scale * nu.weights[i]);
    }
    return f;
  }

  Representation representation() const {
    const bool a = atoms.size() > 0, t = base.size() > 0;
    if (a && t) return Representation::Mixed;
    if (a) return Representation::Atomic;
    if (t) return Representation::Tangent;
    return Representation::Empty;
  }

  std::size_t dim() const { return atoms.size() ? atoms.dim() : base.dim(); }

  SignedField& operator*=(double c) {
    for (double& w : atom_weights) w *= c;
    for (double& w : tangent_weights) w *= c;
    return *this;
  }

  SignedField& operator+=(const SignedField& o) {
    if (representation() != Representation::Empty && o.representation() != Representation::Empty &&
        dim() != o.dim())
      throw DimensionError("SignedField: dimension mismatch");
    for (std::size_t i = 0; i < o.atoms.size(); ++i) {
      atoms.push_back(o.atoms[i]);
      atom_weights.push_back(o.atom_weights[i]);
    }
    for (std::size_t i = 0; i < o.base.size(); ++i) {
      base.push_back(o.base[i]);
      tangents.push_back(o.tangents[i]);
      tangent_weights.push_back(o.tangent_weights[i]);
    }
    return *this;
  }

  friend SignedField operator*(double c, SignedField f) { return f *= c; }
  friend SignedField operator+(SignedField a, const SignedField& b) { return a += b; }
  friend SignedField operator-(SignedField a, SignedField b) { return a += (b *= -1.0); }
};

/// <phi, field>.
inline double pair(const SignedField& f, const TestFunction& phi) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.atoms.size(); ++i) s += f.atom_weights[i] * phi(f.atoms[i]);
  if (f.base.size()) {
    Vec g(f.base.dim());
    for (std::size_t i = 0; i < f.base.size(); ++i) {
      phi.gradient(f.base[i], g);
      s += f.tangent_weights[i] * dot(g, f.tangents[i]);
    }
  }
  return s;
}

/// Periodic spectral grid on the box (-R, R)^d.
struct SpectralGrid {
  double half_width = 1.0;  ///< R_box
  int k_max = 64;           ///< frequency cutoff per axis
  int order = 5;            ///< Sobolev order J

  void validate() const {
    if (!(half_width > 0.0)) throw Error("SpectralGrid: R_box must be positive");
    if (k_max < 8) throw Error("SpectralGrid: K_max must be >= 8");
    if (order < 0) throw Error("SpectralGrid: J must be non-negative");
  }

  /// Sobolev order required for the fluctuation experiments, ceil(d/2) + 4.
  static int required_order(std::size_t d) { return static_cast<int>((d + 1) / 2) + 4; }

  /// Relative weight of the first truncated shell, (1 + (pi K/R)^2)^(-J + d/2).
  double tail_bound(std::size_t d) const {
    const double r = std::numbers::pi * k_max / half_width;
    return std::pow(1.0 + r * r, -static_cast<double>(order) + 0.5 * static_cast<double>(d));
  }
};

struct SobolevResult {
  double norm = 0.0;
  double tail_bound = 0.0;
  bool tail_warning = false;
};

namespace detail {

struct SpectralPoint {
  std::vector<double> x;
  double s = 0.0;
  std::vector<double> t;  // empty for pure atoms
};

/// Merges points with bit-identical positions so that exactly cancelling
/// contributions vanish before any Fourier evaluation.
inline std::vector<SpectralPoint> merge_points(const SignedField& f) {
  std::vector<SpectralPoint> pts;
  const std::size_t d = f.dim();
  for (std::size_t i = 0; i < f.atoms.size(); ++i) {
    auto a = f.atoms[i];
    pts.push_back({{a.begin(), a.end()}, f.atom_weights[i], {}});
  }
  for (std::size_t i = 0; i < f.base.size(); ++i) {
    auto b = f.base[i];
    auto y = f.tangents[i];
    SpectralPoint p{{b.begin(), b.end()}, 0.0, Vec(d)};
    for (std::size_t k = 0; k < d; ++k) p.t[k] = f.tangent_weights[i] * y[k];
    pts.push_back(std::move(p));
  }
  std::stable_sort(pts.begin(), pts.end(), [](const SpectralPoint& a, const SpectralPoint& b) { return a.x < b.x; });
  std::vector<SpectralPoint> out;
  for (auto& p : pts) {
    if (!out.empty() && out.back().x == p.x) {
      auto& q = out.back();
      q.s += p.s;
      if (!p.t.empty()) {
        if (q.t.empty()) q.t.assign(d, 0.0);
        for (std::size_t k = 0; k < d; ++k) q.t[k] += p.t[k];
      }
    } else {
      out.push_back(std::move(p));
    }
  }
  std::erase_if(out, [](const SpectralPoint& p) {
    if (p.s != 0.0) return false;
    for (double v : p.t)
      if (v != 0.0) return false;
    return true;
  });
  return out;
}

}  // namespace detail

/// Truncated periodic H^{-J} norm
///   ||f||^2 = sum_{|k_j| <= K} |f^(k)|^2 (1 + |pi k / R|^2)^(-J) (2R)^(-d),
///   f^(k) = <exp(-i pi k.x / R), f>, evaluated exactly on atoms and tangent pairs.
inline SobolevResult sobolev_neg_norm(const SignedField& f, const SpectralGrid& grid) {
  grid.validate();
  SobolevResult res;
  const std::size_t d = f.dim();
  if (f.representation() == Representation::Empty) return res;
  res.tail_bound = grid.tail_bound(d);
  res.tail_warning = res.tail_bound > 1e-8;
  if (res.tail_warning) warn("sobolev_neg_norm: K_max too small for the requested order (tail bound " +
                             std::to_string(res.tail_bound) + ")");
  const double R = grid.half_width;
  auto check_inside = [&](const PointSet& ps) {
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (double v : ps[i])
        if (!(v > -R && v < R)) throw Error("sobolev_neg_norm: atom outside the spectral box");
  };
  check_inside(f.atoms);
  check_inside(f.base);

  const auto pts = detail::merge_points(f);
  if (pts.empty()) return res;
  const int K = grid.k_max;
  const std::size_t nk = static_cast<std::size_t>(2 * K + 1);
  const double w = std::numbers::pi / R;

  // Channels: 0 = scalar weights, 1..d = tangent components (only for points carrying tangents).
  const std::size_t n = pts.size();
  std::size_t nt = 0;
  for (const auto& p : pts) nt += p.t.empty() ? 0 : 1;
  const std::size_t nch = 1 + (nt ? d : 0);

  // Per-axis factor tables E[j][k][i] = exp(-i w k x_ij), split in real/imag.
  std::vector<Vec> er(d, Vec(nk * n)), ei(d, Vec(nk * n));
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t kk = 0; kk < nk; ++kk) {
      const double k = static_cast<double>(static_cast<int>(kk) - K);
      for (std::size_t i = 0; i < n; ++i) {
        const double ph = -w * k * pts[i].x[j];
        er[j][kk * n + i] = std::cos(ph);
        ei[j][kk * n + i] = std::sin(ph);
      }
    }
  // Level-0 coefficients per channel (real).
  std::vector<Vec> coef(nch, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    coef[0][i] = pts[i].s;
    if (!pts[i].t.empty())
      for (std::size_t c = 1; c < nch; ++c) coef[c][i] = pts[i].t[c - 1];
  }

  // Depth-first over the lattice keeping partial products per channel.
  std::vector<std::vector<Vec>> pr(d + 1, std::vector<Vec>(nch, Vec(n))), pi(d + 1, std::vector<Vec>(nch, Vec(n)));
  for (std::size_t c = 0; c < nch; ++c) {
    pr[0][c] = coef[c];
    std::fill(pi[0][c].begin(), pi[0][c].end(), 0.0);
  }
  std::vector<int> kvec(d, 0);
  double total = 0.0;
  const double vol = std::pow(2.0 * R, -static_cast<double>(d));

  auto leaf = [&](std::size_t level_last) {
    // level_last == d - 1: finish the last axis with dot products.
    const std::size_t j = level_last;
    const int kstart = (j == 0) ? 0 : -K;
    for (int k = kstart; k <= K; ++k) {
      const std::size_t kk = static_cast<std::size_t>(k + K);
      const double* Er = er[j].data() + kk * n;
      const double* Ei = ei[j].data() + kk * n;
      kvec[j] = k;
      double sr[8] = {0}, si[8] = {0};
      for (std::size_t c = 0; c < nch; ++c) {
        const double* ar = pr[j][c].data();
        const double* ai = pi[j][c].data();
        double r = 0.0, m = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          r += ar[i] * Er[i] - ai[i] * Ei[i];
          m += ar[i] * Ei[i] + ai[i] * Er[i];
        }
        sr[c] = r;
        si[c] = m;
      }
      // fhat = S0 + (-i w) sum_j k_j S_j
      double fr = sr[0], fi = si[0];
      double k2 = 0.0;
      for (std::size_t a = 0; a < d; ++a) k2 += static_cast<double>(kvec[a]) * kvec[a];
      for (std::size_t c = 1; c < nch; ++c) {
        const double kc = static_cast<double>(kvec[c - 1]);
        // (-i w kc)(sr + i si) = w kc si - i w kc sr
        fr += w * kc * si[c];
        fi += -w * kc * sr[c];
      }
      const double weight = std::pow(1.0 + w * w * k2, -static_cast<double>(grid.order)) * vol;
      // Hermitian symmetry: f^(-k) = conj f^(k); axis 0 runs over k_0 >= 0 only.
      const double mult = (kvec[0] > 0) ? 2.0 : 1.0;
      total += mult * weight * (fr * fr + fi * fi);
    }
  };

  std::function<void(std::size_t)> descend = [&](std::size_t j) {
    if (j == d - 1) {
      leaf(j);
      return;
    }
    const int kstart = (j == 0) ? 0 : -K;
    for (int k = kstart; k <= K; ++k) {
      const std::size_t kk = static_cast<std::size_t>(k + K);
      kvec[j] = k;
      const double* Er = er[j].data() + kk * n;
      const double* Ei = ei[j].data() + kk * n;
      for (std::size_t c = 0; c < nch; ++c) {
        const double* ar = pr[j][c].data();
        const double* ai = pi[j][c].data();
        double* br = pr[j + 1][c].data();
        double* bi = pi[j + 1][c].data();
        for (std::size_t i = 0; i < n; ++i) {
          br[i] = ar[i] * Er[i] - ai[i] * Ei[i];
          bi[i] = ar[i] * Ei[i] + ai[i] * Er[i];
        }
      }
      descend(j + 1);
    }
  };
  if (nch > 8) throw Error("sobolev_neg_norm: dimension too large");
  descend(0);
  res.norm = std::sqrt(std::max(0.0, total));
  return res;
}

// ---------------------------------------------------------------------------
// Columnar text format: tag,weight,x_1..x_d,y_1..y_d  (tag A = atom, T = tangent pair)
// ---------------------------------------------------------------------------

inline void write_field(std::ostream& out, const SignedField& f) {
  const std::size_t d = f.dim();
  out << "tag,weight";
  for (std::size_t k = 0; k < d; ++k) out << ",x" << k + 1;
  for (std::size_t k = 0; k < d; ++k) out << ",y" << k + 1;
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < f.atoms.size(); ++i) {
    out << "A," << f.atom_weights[i];
    for (double v : f.atoms[i]) out << ',' << v;
    for (std::size_t k = 0; k < d; ++k) out << ",0";
    out << '\n';
  }
  for (std::size_t i = 0; i < f.base.size(); ++i) {
    out << "T," << f.tangent_weights[i];
    for (double v : f.base[i]) out << ',' << v;
    for (double v : f.tangents[i]) out << ',' << v;
    out << '\n';
  }
}

inline SignedField read_field(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("read_field: empty input");
  const auto ncols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (ncols < 4 || (ncols - 2) % 2 != 0) throw Error("read_field: malformed header");
  const std::size_t d = (ncols - 2) / 2;
  SignedField f;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string tok;
    std::vector<std::string> toks;
    while (std::getline(row, tok, ',')) toks.push_back(tok);
    if (toks.size() != ncols) throw Error("read_field: wrong column count");
    Vec x(d), y(d);
    const double w = std::stod(toks[1]);
    for (std::size_t k = 0; k < d; ++k) {
      x[k] = std::stod(toks[2 + k]);
      y[k] = std::stod(toks[2 + d + k]);
    }
    if (toks[0] == "A") {
      f.atoms.push_back(x);
      f.atom_weights.push_back(w);
    } else if (toks[0] == "T") {
      f.base.push_back(x);
      f.tangents.push_back(y);
      f.tangent_weights.push_back(w);
    } else {
      throw Error("read_field: unknown tag '" + toks[0] + "'");
    }
  }
  return f;
}

}  // namespace smfe
