#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>

#include "smfe/core.hpp"
#include "smfe/measure.hpp"

namespace smfe {

// ---------------------------------------------------------------------------
// Data measure
// ---------------------------------------------------------------------------

/// Finite data measure: atoms theta_p in R^{n0}, probability weights w_p and labels f_p.
struct Dataset {
  PointSet atoms;
  Vec weights;
  Vec labels;

  Dataset() = default;
  Dataset(PointSet a, Vec w, Vec f) : atoms(std::move(a)), weights(std::move(w)), labels(std::move(f)) {
    validate();
  }

  std::size_t size() const { return atoms.size(); }
  std::size_t input_dim() const { return atoms.dim(); }

  void validate() const {
    if (atoms.size() == 0) throw Error("Dataset: at least one atom required");
    if (weights.size() != atoms.size() || labels.size() != atoms.size())
      throw DimensionError("Dataset: atoms/weights/labels size mismatch");
    double s = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw Error("Dataset: weights must be positive");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-12) throw Error("Dataset: weights must sum to 1 (|sum-1| <= 1e-12)");
  }
};

namespace detail {

inline std::vector<double> parse_row(const std::string& line) {
  std::string s = line;
  for (char& c : s)
    if (c == ',' || c == ';' || c == '\t') c = ' ';
  std::istringstream in(s);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      throw Error("dataset: non-numeric token '" + tok + "'");
    }
    if (pos != tok.size()) throw Error("dataset: non-numeric token '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace detail

/// Parses rows `theta_1 .. theta_n0, weight, label` (comma, semicolon or
/// whitespace separated; '#' starts a comment line; one optional header line).
/// Weights summing to within [0.99, 1.01] are renormalised with a warning.
inline Dataset parse_dataset(std::istream& in) {
  PointSet atoms;
  Vec weights, labels;
  std::string line;
  bool first_content_line = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    std::vector<double> row;
    try {
      row = detail::parse_row(line);
    } catch (const Error&) {
      if (first_content_line) {  // header
        first_content_line = false;
        continue;
      }
      throw Error("dataset: parse error on line " + std::to_string(lineno));
    }
    first_content_line = false;
    if (row.size() < 3) throw Error("dataset: need at least theta_1, weight, label on line " + std::to_string(lineno));
    const std::size_t n0 = row.size() - 2;
    if (atoms.size() > 0 && n0 != atoms.dim())
      throw DimensionError("dataset: inconsistent column count on line " + std::to_string(lineno));
    atoms.push_back(std::span<const double>(row.data(), n0));
    weights.push_back(row[n0]);
    labels.push_back(row[n0 + 1]);
  }
  if (atoms.size() == 0) throw Error("dataset: no rows");
  double s = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw Error("dataset: weights must be positive");
    s += w;
  }
  if (s < 0.99 || s > 1.01) throw Error("dataset: weights sum to " + std::to_string(s) + ", outside [0.99, 1.01]");
  if (std::abs(s - 1.0) > 1e-12) {
    warn("dataset weights sum to " + std::to_string(s) + "; renormalising");
    for (double& w : weights) w /= s;
    // Put the rounding residue on the largest weight so the invariant holds to 1e-12.
    double t = 0.0;
    for (double w : weights) t += w;
    auto it = std::max_element(weights.begin(), weights.end());
    *it += 1.0 - t;
  }
  return Dataset(std::move(atoms), std::move(weights), std::move(labels));
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("dataset: cannot open " + path);
  return parse_dataset(in);
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class ActivationKind { Tanh, Sigmoid, SmoothedRelu, Identity };

/// Scalar activation with its first two derivatives.
struct Activation {
  ActivationKind kind = ActivationKind::Tanh;

  std::string name() const {
    switch (kind) {
      case ActivationKind::Tanh: return "tanh";
      case ActivationKind::Sigmoid: return "sigmoid";
      case ActivationKind::SmoothedRelu: return "smoothed-relu";
      case ActivationKind::Identity: return "identity";
    }
    return "?";
  }

  static Activation from_name(const std::string& n) {
    if (n == "tanh") return {ActivationKind::Tanh};
    if (n == "sigmoid") return {ActivationKind::Sigmoid};
    if (n == "smoothed-relu" || n == "softplus") return {ActivationKind::SmoothedRelu};
    if (n == "identity") return {ActivationKind::Identity};
    throw Error("unknown activation '" + n + "'");
  }

  /// Identity is linear and unbounded, which breaks the Lipschitz assumptions.
  bool unsafe() const { return kind == ActivationKind::Identity; }

  /// Writes phi(z), phi'(z), phi''(z).
  void eval(double z, double& v, double& d1, double& d2) const {
    switch (kind) {
      case ActivationKind::Tanh: {
        const double t = std::tanh(z);
        v = t;
        d1 = 1.0 - t * t;
        d2 = -2.0 * t * d1;
        return;
      }
      case ActivationKind::Sigmoid: {
        const double s = sigmoid(z);
        v = s;
        d1 = s * (1.0 - s);
        d2 = d1 * (1.0 - 2.0 * s);
        return;
      }
      case ActivationKind::SmoothedRelu: {
        const double s = sigmoid(z);
        v = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        d1 = s;
        d2 = s * (1.0 - s);
        return;
      }
      case ActivationKind::Identity:
        break;
    }
    v = z;
    d1 = 1.0;
    d2 = 0.0;
  }

  double value(double z) const {
    double v, a, b;
    eval(z, v, a, b);
    return v;
  }

 private:
  static double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }
};

// ---------------------------------------------------------------------------
// Coefficient interface
// ---------------------------------------------------------------------------

enum class CoefficientMode { Network, Synthetic };

/// Mean-field coefficients with feature-separable interaction:
///
///   V(x, mu)      = Vbar(x) + sum_k a_k(x) <b_k, mu>,   Vtilde(x, y) = sum_k a_k(x) b_k(y)
///   G(x, mu, p)   : noise direction attached to data channel p
///   Atilde(x,y,mu)= sum_p w_p G(x,mu,p) G(y,mu,p)^T,    A(x, mu) = Atilde(x, x, mu)
///
/// The measure enters only through the feature means m_k = <b_k, mu>, so every
/// evaluation is O(N K) per ensemble rather than O(N^2).
class CoefficientSet {
 public:
  virtual ~CoefficientSet() = default;

  virtual CoefficientMode mode() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t num_features() const = 0;
  /// Noise channel weights w_p (one channel per data atom).
  virtual std::span<const double> channel_weights() const = 0;
  std::size_t channels() const { return channel_weights().size(); }

  /// b_k(x), k < K.
  virtual void features(std::span<const double> x, std::span<double> out) const = 0;
  /// grad b_k(x), K x d row-major.
  virtual void feature_gradients(std::span<const double> x, std::span<double> out) const = 0;
  virtual void drift_bar(std::span<const double> x, std::span<double> out) const = 0;
  /// D Vbar(x), d x d row-major, (i, j) = d Vbar_i / d x_j.
  virtual void drift_bar_jacobian(std::span<const double> x, std::span<double> out) const = 0;
  /// a_k(x), K x d row-major.
  virtual void interaction_vectors(std::span<const double> x, std::span<double> out) const = 0;
  /// D a_k(x), K blocks of d x d.
  virtual void interaction_jacobians(std::span<const double> x, std::span<double> out) const = 0;
  /// G(x, mu, p) for every channel p, P x d row-major; mu given by its feature means.
  virtual void noise(std::span<const double> x, std::span<const double> means, std::span<double> out) const = 0;

  /// V(x, mu) and all G(x, mu, p) in one pass. Hot path of the integrators.
  virtual void drift_and_noise(std::span<const double> x, std::span<const double> means, std::span<double> v,
                               std::span<double> g) const {
    drift(x, means, v);
    noise(x, means, g);
  }

  // Network-only quantities; synthetic coefficients reject them.
  virtual double potential_F(std::span<const double>) const { throw Error("potential_F requires network mode"); }
  virtual double kernel_K(std::span<const double>, std::span<const double>) const {
    throw Error("kernel_K requires network mode");
  }

  // --- derived quantities -------------------------------------------------

  /// Feature means <b_k, mu>, accumulated in atom order.
  Vec feature_means(const EmpiricalMeasure& mu) const {
    check_dim(mu.dim());
    const std::size_t K = num_features();
    Vec m(K, 0.0), b(K);
    for (std::size_t i = 0; i < mu.size(); ++i) {
      features(mu.atoms[i], b);
      for (std::size_t k = 0; k < K; ++k) m[k] += mu.weights[i] * b[k];
    }
    return m;
  }

  void drift(std::span<const double> x, std::span<const double> means, std::span<double> out) const {
    const std::size_t d = dim(), K = num_features();
    drift_bar(x, out);
    if (K == 0) return;
    Vec a(K * d);
    interaction_vectors(x, a);
    for (std::size_t k = 0; k < K; ++k) axpy(means[k], std::span<const double>(a.data() + k * d, d), out);
  }

  Vec drift(std::span<const double> x, const EmpiricalMeasure& mu) const {
    check_dim(x.size());
    Vec out(dim());
    const Vec m = feature_means(mu);
    drift(x, m, out);
    return out;
  }

  Vec drift_bar(std::span<const double> x) const {
    Vec out(dim());
    drift_bar(x, std::span<double>(out));
    return out;
  }

  /// Vtilde(x, y) = sum_k a_k(x) b_k(y).
  Vec interaction(std::span<const double> x, std::span<const double> y) const {
    const std::size_t d = dim(), K = num_features();
    Vec out(d, 0.0), a(K * d), b(K);
    interaction_vectors(x, a);
    features(y, b);
    for (std::size_t k = 0; k < K; ++k) axpy(b[k], std::span<const double>(a.data() + k * d, d), out);
    return out;
  }

  Matrix noise_matrix(std::span<const double> x, std::span<const double> means) const {
    Matrix g(channels(), dim());
    noise(x, means, g.a);
    return g;
  }

  Matrix noise_matrix(std::span<const double> x, const EmpiricalMeasure& mu) const {
    return noise_matrix(x, feature_means(mu));
  }

  /// Atilde(x, y, mu) = sum_p w_p G(x,mu,p) (x) G(y,mu,p).
  Matrix cov_tilde(std::span<const double> x, std::span<const double> y, std::span<const double> means) const {
    const Matrix gx = noise_matrix(x, means), gy = noise_matrix(y, means);
    const auto w = channel_weights();
    const std::size_t d = dim();
    Matrix out(d, d);
    for (std::size_t p = 0; p < w.size(); ++p)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) out(i, j) += w[p] * gx(p, i) * gy(p, j);
    return out;
  }

  Matrix cov_tilde(std::span<const double> x, std::span<const double> y, const EmpiricalMeasure& mu) const {
    return cov_tilde(x, y, feature_means(mu));
  }

  Matrix cov(std::span<const double> x, std::span<const double> means) const { return cov_tilde(x, x, means); }
  Matrix cov(std::span<const double> x, const EmpiricalMeasure& mu) const { return cov_tilde(x, x, mu); }

  /// D_x V(x, mu) = D Vbar(x) + sum_k m_k D a_k(x).
  Matrix drift_jacobian(std::span<const double> x, std::span<const double> means) const {
    const std::size_t d = dim(), K = num_features();
    Matrix j(d, d);
    drift_bar_jacobian(x, j.a);
    if (K == 0) return j;
    Vec da(K * d * d);
    interaction_jacobians(x, da);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t e = 0; e < d * d; ++e) j.a[e] += means[k] * da[k * d * d + e];
    return j;
  }

  void check_dim(std::size_t d) const {
    if (d != dim())
      throw DimensionError("coefficient dimension " + std::to_string(dim()) + " but got " + std::to_string(d));
  }
};

// ---------------------------------------------------------------------------
// Shallow-network coefficients
// ---------------------------------------------------------------------------

struct NetworkOptions {
  /// Adds a bias coordinate b to each parameter (d = n0 + 2). Off by default.
  bool bias = false;
  /// Required for activations with unbounded derivatives (identity).
  bool allow_unsafe = false;
};

/// Coefficients of the mean-field SGD dynamics for f^M(x, theta) = (1/M) sum_i c_i phi(u_i . theta [+ b_i]).
///
/// Parameters are packed as x = (c, u_1..u_n0 [, b]). With r_p(mu) = f_p - <Phi(., theta_p), mu>:
///   V(x, mu)    = sum_p w_p r_p grad Phi(x, theta_p)
///   G(x, mu, p) = r_p grad Phi(x, theta_p) - V(x, mu)
/// The feature set is b_p = Phi(., theta_p) with a_p = -w_p grad Phi(., theta_p).
class NetworkCoefficients final : public CoefficientSet {
 public:
  NetworkCoefficients(Dataset data, Activation act, NetworkOptions opts = {})
      : data_(std::move(data)), act_(act), opts_(opts) {
    data_.validate();
    if (act_.unsafe() && !opts_.allow_unsafe)
      throw Error("activation '" + act_.name() + "' has unbounded derivatives; enable unsafe-coefficients");
    n0_ = data_.input_dim();
    const std::size_t m = n0_ + (opts_.bias ? 1 : 0);
    inputs_ = PointSet(data_.size(), m);
    for (std::size_t p = 0; p < data_.size(); ++p) {
      for (std::size_t j = 0; j < n0_; ++j) inputs_[p][j] = data_.atoms[p][j];
      if (opts_.bias) inputs_[p][n0_] = 1.0;
    }
  }

  using CoefficientSet::drift_bar;

  CoefficientMode mode() const override { return CoefficientMode::Network; }
  std::size_t dim() const override { return 1 + inputs_.dim(); }
  std::size_t num_features() const override { return data_.size(); }
  std::span<const double> channel_weights() const override { return data_.weights; }

  const Dataset& dataset() const { return data_; }
  const Activation& activation() const { return act_; }
  const NetworkOptions& options() const { return opts_; }

  /// Phi(x, theta_p) = c phi(u . theta_p).
  double feature(std::span<const double> x, std::size_t p) const {
    check(x, p);
    return x[0] * act_.value(preact(x, p));
  }

  /// grad_x Phi(x, theta_p) = (phi(z), c phi'(z) theta_p), z = u . theta_p.
  Vec grad_feature(std::span<const double> x, std::size_t p) const {
    check(x, p);
    Vec g(dim());
    grad_feature_into(x, p, g);
    return g;
  }

  Matrix hessian_feature(std::span<const double> x, std::size_t p) const {
    check(x, p);
    Matrix h(dim(), dim());
    add_hessian(x, p, 1.0, h.a);
    return h;
  }

  /// Network output f^M(x, theta_p) for a parameter list.
  double prediction(const PointSet& params, std::size_t p) const {
    double s = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) s += feature(params[i], p);
    return s / static_cast<double>(params.size());
  }

  /// F(x) = sum_p w_p f_p Phi(x, theta_p).
  double potential_F(std::span<const double> x) const override {
    check_dim(x.size());
    double s = 0.0;
    for (std::size_t p = 0; p < data_.size(); ++p) s += data_.weights[p] * data_.labels[p] * feature(x, p);
    return s;
  }

  /// K(x, y) = sum_p w_p Phi(x, theta_p) Phi(y, theta_p).
  double kernel_K(std::span<const double> x, std::span<const double> y) const override {
    check_dim(x.size());
    check_dim(y.size());
    double s = 0.0;
    for (std::size_t p = 0; p < data_.size(); ++p) s += data_.weights[p] * feature(x, p) * feature(y, p);
    return s;
  }

  Vec grad_F(std::span<const double> x) const { return drift_bar(x); }

  /// grad_x K(x, y).
  Vec grad_x_K(std::span<const double> x, std::span<const double> y) const {
    check_dim(x.size());
    Vec out(dim(), 0.0), g(dim());
    for (std::size_t p = 0; p < data_.size(); ++p) {
      grad_feature_into(x, p, g);
      axpy(data_.weights[p] * feature(y, p), g, out);
    }
    return out;
  }

  /// Square loss sum_p w_p |f_p - f^M(x, theta_p)|^2 (no 1/2 factor).
  double loss(const PointSet& params) const {
    if (params.size() == 0) throw Error("loss: empty parameter list");
    check_dim(params.dim());
    double s = 0.0;
    for (std::size_t p = 0; p < data_.size(); ++p) {
      const double r = data_.labels[p] - prediction(params, p);
      s += data_.weights[p] * r * r;
    }
    return s;
  }

  /// Same loss through the interaction-energy form C_f - (2/M) sum F + (1/M^2) sum K.
  double loss_kernel_form(const PointSet& params) const {
    if (params.size() == 0) throw Error("loss: empty parameter list");
    check_dim(params.dim());
    const double M = static_cast<double>(params.size());
    double cf = 0.0;
    for (std::size_t p = 0; p < data_.size(); ++p) cf += data_.weights[p] * data_.labels[p] * data_.labels[p];
    double sf = 0.0, sk = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      sf += potential_F(params[i]);
      for (std::size_t j = 0; j < params.size(); ++j) sk += kernel_K(params[i], params[j]);
    }
    return cf - 2.0 * sf / M + sk / (M * M);
  }

  // --- CoefficientSet ------------------------------------------------------

  void features(std::span<const double> x, std::span<double> out) const override {
    for (std::size_t p = 0; p < data_.size(); ++p) out[p] = x[0] * act_.value(preact(x, p));
  }

  void feature_gradients(std::span<const double> x, std::span<double> out) const override {
    const std::size_t d = dim();
    for (std::size_t p = 0; p < data_.size(); ++p) grad_feature_into(x, p, out.subspan(p * d, d));
  }

  void drift_bar(std::span<const double> x, std::span<double> out) const override {
    const std::size_t d = dim();
    std::fill(out.begin(), out.end(), 0.0);
    Vec g(d);
    for (std::size_t p = 0; p < data_.size(); ++p) {
      grad_feature_into(x, p, g);
      axpy(data_.weights[p] * data_.labels[p], g, out);
    }
  }

  void drift_bar_jacobian(std::span<const double> x, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t p = 0; p < data_.size(); ++p) add_hessian(x, p, data_.weights[p] * data_.labels[p], out);
  }

  void interaction_vectors(std::span<const double> x, std::span<double> out) const override {
    const std::size_t d = dim();
    for (std::size_t p = 0; p < data_.size(); ++p) {
      auto row = out.subspan(p * d, d);
      grad_feature_into(x, p, row);
      for (double& v : row) v *= -data_.weights[p];
    }
  }

  void interaction_jacobians(std::span<const double> x, std::span<double> out) const override {
    const std::size_t d = dim();
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t p = 0; p < data_.size(); ++p) add_hessian(x, p, -data_.weights[p], out.subspan(p * d * d, d * d));
  }

  void noise(std::span<const double> x, std::span<const double> means, std::span<double> out) const override {
    Vec v(dim());
    drift_and_noise(x, means, v, out);
  }

  void drift_and_noise(std::span<const double> x, std::span<const double> means, std::span<double> v,
                       std::span<double> g) const override {
    const std::size_t d = dim(), P = data_.size();
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t p = 0; p < P; ++p) {
      auto row = g.subspan(p * d, d);
      grad_feature_into(x, p, row);
      const double r = data_.labels[p] - means[p];
      for (double& e : row) e *= r;
      axpy(data_.weights[p], row, v);
    }
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t j = 0; j < d; ++j) g[p * d + j] -= v[j];
  }

 private:
  double preact(std::span<const double> x, std::size_t p) const {
    const auto th = inputs_[p];
    double z = 0.0;
    for (std::size_t j = 0; j < th.size(); ++j) z += x[1 + j] * th[j];
    return z;
  }

  void grad_feature_into(std::span<const double> x, std::size_t p, std::span<double> out) const {
    double v, d1, d2;
    act_.eval(preact(x, p), v, d1, d2);
    const auto th = inputs_[p];
    out[0] = v;
    const double s = x[0] * d1;
    for (std::size_t j = 0; j < th.size(); ++j) out[1 + j] = s * th[j];
  }

  /// out += scale * D^2_x Phi(x, theta_p).
  void add_hessian(std::span<const double> x, std::size_t p, double scale, std::span<double> out) const {
    const std::size_t d = dim();
    double v, d1, d2;
    act_.eval(preact(x, p), v, d1, d2);
    const auto th = inputs_[p];
    for (std::size_t j = 0; j < th.size(); ++j) {
      out[0 * d + 1 + j] += scale * d1 * th[j];
      out[(1 + j) * d + 0] += scale * d1 * th[j];
      for (std::size_t k = 0; k < th.size(); ++k) out[(1 + j) * d + 1 + k] += scale * x[0] * d2 * th[j] * th[k];
    }
  }

  void check(std::span<const double> x, std::size_t p) const {
    check_dim(x.size());
    if (p >= data_.size()) throw Error("data index out of range");
  }

  Dataset data_;
  Activation act_;
  NetworkOptions opts_;
  std::size_t n0_ = 0;
  PointSet inputs_;  // theta_p, extended by a constant 1 when the bias is enabled
};

// ---------------------------------------------------------------------------
// Synthetic coefficients
// ---------------------------------------------------------------------------

/// User-supplied evaluators; empty callbacks mean "identically zero".
struct SyntheticSpec {
  using Map = std::function<void(std::span<const double> x, std::span<double> out)>;
  using NoiseMap = std::function<void(std::span<const double> x, std::span<const double> means, std::span<double> out)>;

  std::size_t dim = 1;
  Vec channel_weights{1.0};
  std::size_t num_features = 0;

  Map drift_bar;             // d
  Map drift_bar_jacobian;    // d x d
  Map features;              // K
  Map feature_gradients;     // K x d
  Map interaction_vectors;   // K x d
  Map interaction_jacobians; // K x d x d
  NoiseMap noise;            // P x d
};

/// Coefficients realised from user evaluators; used for degenerate and
/// analytically solvable configurations.
class SyntheticCoefficients final : public CoefficientSet {
 public:
  explicit SyntheticCoefficients(SyntheticSpec s) : s_(std::move(s)) {
    if (s_.dim == 0) throw Error("synthetic coefficients: dim must be positive");
    if (s_.channel_weights.empty()) throw Error("synthetic coefficients: need at least one channel");
    double t = 0.0;
    for (double w : s_.channel_weights) {
      if (!(w > 0.0)) throw Error("synthetic coefficients: channel weights must be positive");
      t += w;
    }
    if (std::abs(t - 1.0) > 1e-12) throw Error("synthetic coefficients: channel weights must sum to 1");
    if (s_.num_features > 0 && (!s_.features || !s_.interaction_vectors))
      throw Error("synthetic coefficients: features and interaction vectors required when num_features > 0");
  }

  using CoefficientSet::drift_bar;

  CoefficientMode mode() const override { return CoefficientMode::Synthetic; }
  std::size_t dim() const override { return s_.dim; }
  std::size_t num_features() const override { return s_.num_features; }
  std::span<const double> channel_weights() const override { return s_.channel_weights; }

  void features(std::span<const double> x, std::span<double> out) const override { call(s_.features, x, out); }
  void feature_gradients(std::span<const double> x, std::span<double> out) const override {
    call(s_.feature_gradients, x, out);
  }
  void drift_bar(std::span<const double> x, std::span<double> out) const override { call(s_.drift_bar, x, out); }
  void drift_bar_jacobian(std::span<const double> x, std::span<double> out) const override {
    call(s_.drift_bar_jacobian, x, out);
  }
  void interaction_vectors(std::span<const double> x, std::span<double> out) const override {
    call(s_.interaction_vectors, x, out);
  }
  void interaction_jacobians(std::span<const double> x, std::span<double> out) const override {
    call(s_.interaction_jacobians, x, out);
  }
  void noise(std::span<const double> x, std::span<const double> means, std::span<double> out) const override {
    if (s_.noise)
      s_.noise(x, means, out);
    else
      std::fill(out.begin(), out.end(), 0.0);
  }

 private:
  static void call(const SyntheticSpec::Map& f, std::span<const double> x, std::span<double> out) {
    if (f)
      f(x, out);
    else
      std::fill(out.begin(), out.end(), 0.0);
  }

  SyntheticSpec s_;
};

/// Vbar = v (constant), no interaction, no noise.
inline SyntheticCoefficients constant_drift_coefficients(Vec v, Vec channel_weights = {1.0}) {
  SyntheticSpec s;
  s.dim = v.size();
  s.channel_weights = std::move(channel_weights);
  s.drift_bar = [v](std::span<const double>, std::span<double> out) { std::copy(v.begin(), v.end(), out.begin()); };
  return SyntheticCoefficients(std::move(s));
}

/// V = 0, G = 0.
inline SyntheticCoefficients frozen_coefficients(std::size_t dim, Vec channel_weights = {1.0}) {
  SyntheticSpec s;
  s.dim = dim;
  s.channel_weights = std::move(channel_weights);
  return SyntheticCoefficients(std::move(s));
}

}  // namespace smfe
