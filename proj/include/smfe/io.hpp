#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "smfe/core.hpp"
#include "smfe/dynamics.hpp"
#include "smfe/fluctuations.hpp"

namespace smfe {

// Trajectory text format:
//   # key=value metadata lines (integrator config and noise provenance)
//   step,time,particle,weight,x1..xd[,y1..yd]
// The noise itself is never written; (seed, dt, steps, coarsening) recreate it.

namespace detail {

inline void write_meta(std::ostream& out, const IntegratorConfig& cfg, const NoiseProvenance& n) {
  out << "# dt=" << cfg.dt << "\n# horizon=" << cfg.horizon << "\n# epsilon=" << cfg.epsilon
      << "\n# snapshot_stride=" << cfg.snapshot_stride << "\n# noise=" << (n.present ? 1 : 0)
      << "\n# noise_seed=" << n.seed << "\n# noise_dt=" << n.dt << "\n# noise_steps=" << n.steps
      << "\n# noise_coarsening=" << n.coarsening << '\n';
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream row(line);
  std::string tok;
  while (std::getline(row, tok, ',')) out.push_back(tok);
  return out;
}

}  // namespace detail

inline void write_trajectory(std::ostream& out, const Trajectory& tr) {
  const auto prec = out.precision(17);
  detail::write_meta(out, tr.config, tr.noise);
  const std::size_t d = tr.initial().dim();
  out << "step,time,particle,weight";
  for (std::size_t k = 0; k < d; ++k) out << ",x" << k + 1;
  out << '\n';
  for (std::size_t s = 0; s < tr.size(); ++s) {
    const auto& e = tr.snapshots[s];
    for (std::size_t i = 0; i < e.size(); ++i) {
      out << tr.steps[s] << ',' << e.time << ',' << i << ',' << e.weights[i];
      for (double v : e.atoms[i]) out << ',' << v;
      out << '\n';
    }
  }
  out.precision(prec);
}

inline void write_tangent_path(std::ostream& out, const TangentPath& path) {
  const auto prec = out.precision(17);
  detail::write_meta(out, path.config, path.noise);
  out << "# forcing_scale=" << path.forcing_scale << '\n';
  const std::size_t d = path.snapshots.front().dim();
  out << "step,time,particle,weight";
  for (std::size_t k = 0; k < d; ++k) out << ",x" << k + 1;
  for (std::size_t k = 0; k < d; ++k) out << ",y" << k + 1;
  out << '\n';
  for (std::size_t s = 0; s < path.size(); ++s) {
    const auto& e = path.snapshots[s];
    for (std::size_t i = 0; i < e.size(); ++i) {
      out << path.steps[s] << ',' << e.time << ',' << i << ',' << e.weights[i];
      for (double v : e.base[i]) out << ',' << v;
      for (double v : e.tangents[i]) out << ',' << v;
      out << '\n';
    }
  }
  out.precision(prec);
}

inline Trajectory read_trajectory(std::istream& in) {
  std::map<std::string, std::string> meta;
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.rfind("#", 0) == 0) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) meta[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    header = detail::split_csv(line);
    break;
  }
  if (header.size() < 5 || header[0] != "step") throw Error("read_trajectory: missing header");
  auto get = [&](const char* k) {
    auto it = meta.find(k);
    if (it == meta.end()) throw Error(std::string("read_trajectory: missing metadata '") + k + "'");
    return it->second;
  };
  Trajectory tr;
  tr.config.dt = std::stod(get("dt"));
  tr.config.horizon = std::stod(get("horizon"));
  tr.config.epsilon = std::stod(get("epsilon"));
  tr.config.snapshot_stride = std::stoull(get("snapshot_stride"));
  tr.noise.present = get("noise") == "1";
  tr.noise.seed = std::stoull(get("noise_seed"));
  tr.noise.dt = std::stod(get("noise_dt"));
  tr.noise.steps = std::stoull(get("noise_steps"));
  tr.noise.coarsening = std::stoull(get("noise_coarsening"));
  const std::size_t d = header.size() - 4;
  long cur_step = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t = detail::split_csv(line);
    if (t.size() != header.size()) throw Error("read_trajectory: wrong column count");
    const long step = std::stol(t[0]);
    if (step != cur_step) {
      tr.snapshots.emplace_back();
      tr.snapshots.back().time = std::stod(t[1]);
      tr.steps.push_back(static_cast<std::size_t>(step));
      cur_step = step;
    }
    auto& e = tr.snapshots.back();
    Vec x(d);
    for (std::size_t k = 0; k < d; ++k) x[k] = std::stod(t[4 + k]);
    e.atoms.push_back(x);
    e.weights.push_back(std::stod(t[3]));
  }
  if (tr.snapshots.empty()) throw Error("read_trajectory: no rows");
  for (const auto& e : tr.snapshots) e.validate();
  return tr;
}

inline void save_trajectory(const std::string& path, const Trajectory& tr) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path + "'");
  write_trajectory(f, tr);
}

inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path + "'");
  return read_trajectory(f);
}

}  // namespace smfe
