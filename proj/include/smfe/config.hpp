#pragma once

#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <string>

#include <json.hpp>

#include "smfe/coefficients.hpp"
#include "smfe/core.hpp"
#include "smfe/dynamics.hpp"

namespace smfe {

using json = nlohmann::json;

struct InitialConfig {
  std::string kind = "uniform";  ///< uniform | gaussian | atoms
  Vec lo{-1.0, -1.0}, hi{1.0, 1.0};
  Vec mean, stddev;
  std::vector<Vec> atoms;
};

struct InstanceConfig {
  /// reference | network | single-atom | interacting-1d | frozen | constant-drift
  std::string kind = "reference";
  std::string dataset_path;
  std::vector<Vec> data_atoms;
  Vec data_weights, data_labels;
  std::string activation = "tanh";
  bool bias = false;
  bool allow_unsafe = false;
  Vec drift;  ///< constant-drift only
  InitialConfig initial;
};

struct ExperimentConfig {
  InstanceConfig instance;
  std::size_t particles = 200;
  double horizon = 1.0;
  double dt = 1e-3;
  double epsilon = 1e-2;  ///< single noise level for simulate / particle-rate
  Vec epsilons{1e-1, 3e-2, 1e-2, 3e-3, 1e-3};
  std::vector<std::size_t> sizes{50, 100, 200};
  Vec learning_rates{0.04, 0.02, 0.01, 0.005};
  std::size_t replicas = 50;
  std::uint64_t base_seed = 1;
  std::size_t snapshot_stride = 50;
  int sobolev_order = 5;
  int k_max = 64;
  double box_margin = 0.2;
  std::size_t reference_particles = 0;  ///< 0 -> 20 * max(sizes)
  std::size_t amplification_replicas = 30;
  std::size_t bootstrap = 2000;
  double compare_interval = 0.05;
  std::string test_function = "bump0";
  bool sgd_full_batch = false;
  std::string output = "out";
  std::size_t threads = 1;

  std::size_t steps() const {
    IntegratorConfig c;
    c.dt = dt;
    c.horizon = horizon;
    return c.steps();
  }

  IntegratorConfig integrator(double eps, std::size_t stride) const {
    IntegratorConfig c;
    c.dt = dt;
    c.horizon = horizon;
    c.epsilon = eps;
    c.snapshot_stride = stride;
    c.validate();
    return c;
  }

  std::size_t reference_size() const {
    if (reference_particles) return reference_particles;
    std::size_t m = 0;
    for (auto s : sizes) m = std::max(m, s);
    return 20 * m;
  }

  std::uint64_t seed(std::size_t replica) const { return base_seed + replica; }

  /// Grids strictly positive and sorted; rate experiments need >= 10 replicas.
  void validate(bool rate_experiment = false) const {
    auto check_grid = [](const Vec& g, const char* name) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(g[i] > 0.0)) throw Error(std::string("config: grid '") + name + "' must be strictly positive");
        if (i && !(g[i] != g[i - 1])) throw Error(std::string("config: grid '") + name + "' has duplicates");
      }
      bool up = true, down = true;
      for (std::size_t i = 1; i < g.size(); ++i) {
        up = up && g[i] > g[i - 1];
        down = down && g[i] < g[i - 1];
      }
      if (!up && !down) throw Error(std::string("config: grid '") + name + "' must be sorted");
    };
    check_grid(epsilons, "epsilons");
    check_grid(learning_rates, "learning_rates");
    Vec s(sizes.begin(), sizes.end());
    check_grid(s, "sizes");
    if (particles == 0) throw Error("config: particles must be positive");
    if (!(dt > 0.0) || !(horizon > 0.0)) throw Error("config: dt and horizon must be positive");
    (void)steps();
    if (snapshot_stride == 0) throw Error("config: snapshot_stride must be positive");
    if (rate_experiment && replicas < 10) throw Error("config: rate experiments need at least 10 replicas");
  }
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json to_json(const ExperimentConfig& c) {
  const auto& in = c.instance;
  json init = {{"kind", in.initial.kind}, {"lo", in.initial.lo}, {"hi", in.initial.hi},
               {"mean", in.initial.mean}, {"stddev", in.initial.stddev}, {"atoms", in.initial.atoms}};
  json inst = {{"kind", in.kind},
               {"dataset_path", in.dataset_path},
               {"data_atoms", in.data_atoms},
               {"data_weights", in.data_weights},
               {"data_labels", in.data_labels},
               {"activation", in.activation},
               {"bias", in.bias},
               {"allow_unsafe", in.allow_unsafe},
               {"drift", in.drift},
               {"initial", init}};
  return {{"instance", inst},
          {"particles", c.particles},
          {"horizon", c.horizon},
          {"dt", c.dt},
          {"epsilon", c.epsilon},
          {"epsilons", c.epsilons},
          {"sizes", c.sizes},
          {"learning_rates", c.learning_rates},
          {"replicas", c.replicas},
          {"base_seed", c.base_seed},
          {"snapshot_stride", c.snapshot_stride},
          {"sobolev_order", c.sobolev_order},
          {"k_max", c.k_max},
          {"box_margin", c.box_margin},
          {"reference_particles", c.reference_particles},
          {"amplification_replicas", c.amplification_replicas},
          {"bootstrap", c.bootstrap},
          {"compare_interval", c.compare_interval},
          {"test_function", c.test_function},
          {"sgd_full_batch", c.sgd_full_batch}};
}

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Unknown keys are rejected so that typos do not silently fall back to defaults.
inline ExperimentConfig config_from_json(const json& j) {
  static const char* top[] = {"instance", "particles", "horizon", "dt", "epsilon", "epsilons", "sizes",
                              "learning_rates", "replicas", "base_seed", "snapshot_stride", "sobolev_order",
                              "k_max", "box_margin", "reference_particles", "amplification_replicas",
                              "bootstrap", "compare_interval", "test_function", "sgd_full_batch", "output",
                              "threads"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find_if(std::begin(top), std::end(top), [&](const char* k) { return it.key() == k; }) == std::end(top))
      throw Error("config: unknown key '" + it.key() + "'");
  ExperimentConfig c;
  using detail::read_opt;
  try {
    if (j.contains("instance")) {
      const auto& i = j.at("instance");
      auto& in = c.instance;
      read_opt(i, "kind", in.kind);
      read_opt(i, "dataset_path", in.dataset_path);
      read_opt(i, "data_atoms", in.data_atoms);
      read_opt(i, "data_weights", in.data_weights);
      read_opt(i, "data_labels", in.data_labels);
      read_opt(i, "activation", in.activation);
      read_opt(i, "bias", in.bias);
      read_opt(i, "allow_unsafe", in.allow_unsafe);
      read_opt(i, "drift", in.drift);
      if (i.contains("initial")) {
        const auto& s = i.at("initial");
        read_opt(s, "kind", in.initial.kind);
        read_opt(s, "lo", in.initial.lo);
        read_opt(s, "hi", in.initial.hi);
        read_opt(s, "mean", in.initial.mean);
        read_opt(s, "stddev", in.initial.stddev);
        read_opt(s, "atoms", in.initial.atoms);
      }
    }
    read_opt(j, "particles", c.particles);
    read_opt(j, "horizon", c.horizon);
    read_opt(j, "dt", c.dt);
    read_opt(j, "epsilon", c.epsilon);
    read_opt(j, "epsilons", c.epsilons);
    read_opt(j, "sizes", c.sizes);
    read_opt(j, "learning_rates", c.learning_rates);
    read_opt(j, "replicas", c.replicas);
    read_opt(j, "base_seed", c.base_seed);
    read_opt(j, "snapshot_stride", c.snapshot_stride);
    read_opt(j, "sobolev_order", c.sobolev_order);
    read_opt(j, "k_max", c.k_max);
    read_opt(j, "box_margin", c.box_margin);
    read_opt(j, "reference_particles", c.reference_particles);
    read_opt(j, "amplification_replicas", c.amplification_replicas);
    read_opt(j, "bootstrap", c.bootstrap);
    read_opt(j, "compare_interval", c.compare_interval);
    read_opt(j, "test_function", c.test_function);
    read_opt(j, "sgd_full_batch", c.sgd_full_batch);
    read_opt(j, "output", c.output);
    read_opt(j, "threads", c.threads);
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(f, nullptr, true, true);
  } catch (const json::exception& e) {
    throw Error("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a of the canonical (key-sorted, compact) JSON echo, as 16 hex digits.
/// Output directory and thread count are excluded: results do not depend on them.
inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

/// Five equally weighted inputs in [-1, 1] with labels 0.5 sin(pi theta).
inline Dataset reference_dataset() {
  Dataset d;
  for (double t : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    d.atoms.push_back(Vec{t});
    d.weights.push_back(0.2);
    d.labels.push_back(0.5 * std::sin(std::numbers::pi * t));
  }
  return d;
}

/// d = 1 coefficients with a Kuramoto-type interaction sin(y - x), a confining
/// drift and two opposite noise channels depending on the state and the measure.
inline SyntheticCoefficients interacting_1d_coefficients() {
  SyntheticSpec s;
  s.dim = 1;
  s.channel_weights = {0.5, 0.5};
  s.num_features = 2;
  s.drift_bar = [](std::span<const double> x, std::span<double> o) { o[0] = -0.5 * x[0]; };
  s.drift_bar_jacobian = [](std::span<const double>, std::span<double> o) { o[0] = -0.5; };
  s.features = [](std::span<const double> x, std::span<double> o) {
    o[0] = std::sin(x[0]);
    o[1] = std::cos(x[0]);
  };
  s.feature_gradients = [](std::span<const double> x, std::span<double> o) {
    o[0] = std::cos(x[0]);
    o[1] = -std::sin(x[0]);
  };
  s.interaction_vectors = [](std::span<const double> x, std::span<double> o) {
    o[0] = 0.3 * std::cos(x[0]);
    o[1] = -0.3 * std::sin(x[0]);
  };
  s.interaction_jacobians = [](std::span<const double> x, std::span<double> o) {
    o[0] = -0.3 * std::sin(x[0]);
    o[1] = -0.3 * std::cos(x[0]);
  };
  s.noise = [](std::span<const double> x, std::span<const double> m, std::span<double> o) {
    const double g = 0.4 * std::cos(x[0]) + 0.2 * m[0];
    o[0] = g;
    o[1] = -g;
  };
  return SyntheticCoefficients(std::move(s));
}

inline Dataset instance_dataset(const InstanceConfig& in) {
  if (!in.dataset_path.empty()) return load_dataset(in.dataset_path);
  if (!in.data_atoms.empty()) {
    Dataset d;
    for (const auto& a : in.data_atoms) d.atoms.push_back(a);
    d.weights = in.data_weights;
    d.labels = in.data_labels;
    if (d.weights.empty()) d.weights.assign(d.atoms.size(), 1.0 / static_cast<double>(d.atoms.size()));
    d.validate();
    return d;
  }
  if (in.kind == "single-atom") {
    Dataset d;
    d.atoms.push_back(Vec{0.5});
    d.weights = {1.0};
    d.labels = {0.5 * std::sin(std::numbers::pi * 0.5)};
    return d;
  }
  return reference_dataset();
}

inline std::unique_ptr<CoefficientSet> build_coefficients(const InstanceConfig& in) {
  if (in.kind == "reference" || in.kind == "network" || in.kind == "single-atom") {
    NetworkOptions o;
    o.bias = in.bias;
    o.allow_unsafe = in.allow_unsafe;
    return std::make_unique<NetworkCoefficients>(instance_dataset(in), Activation::from_name(in.activation), o);
  }
  if (in.kind == "interacting-1d") return std::make_unique<SyntheticCoefficients>(interacting_1d_coefficients());
  if (in.kind == "frozen")
    return std::make_unique<SyntheticCoefficients>(frozen_coefficients(in.initial.lo.size(), {0.5, 0.5}));
  if (in.kind == "constant-drift") {
    if (in.drift.empty()) throw Error("instance: constant-drift needs 'drift'");
    return std::make_unique<SyntheticCoefficients>(constant_drift_coefficients(in.drift, {0.5, 0.5}));
  }
  throw Error("instance: unknown kind '" + in.kind + "'");
}

inline InitialSpec initial_spec(const InitialConfig& c) {
  if (c.kind == "uniform") return UniformBox{c.lo, c.hi};
  if (c.kind == "gaussian") return TruncatedGaussian{c.mean, c.stddev, c.lo, c.hi};
  if (c.kind == "atoms") {
    AtomList a;
    for (const auto& x : c.atoms) a.atoms.push_back(x);
    return a;
  }
  throw Error("initial: unknown kind '" + c.kind + "'");
}

/// The reference instance: d = 2, tanh, 5 data atoms, mu_0 uniform on [-1, 1]^2,
/// N = 200, T = 1, dt = 1e-3, 50 replicas.
inline ExperimentConfig reference_config() { return ExperimentConfig{}; }

}  // namespace smfe
