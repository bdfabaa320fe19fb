#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "smfe/smfe.hpp"

using namespace smfe;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> replicas;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file (comments allowed)")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "base seed; replica r uses seed + r");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--replicas", c.replicas, "number of replicas");
  sub->add_option("--threads", c.threads, "worker threads (results do not depend on it)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) cfg.base_seed = *c.seed;
  if (c.out) cfg.output = *c.out;
  if (c.replicas) cfg.replicas = *c.replicas;
  if (c.threads) cfg.threads = *c.threads;
  return cfg;
}

void print_summary(const ResultTable& t) {
  for (const auto& s : t.summary) {
    if (s.kind == "fit") {
      std::cout << t.experiment << "  fit " << s.metric << "  slope " << s.slope << "  90% CI [" << s.slope_low << ", "
                << s.slope_high << "]" << (s.note.empty() ? "" : "  " + s.note) << '\n';
    } else if (s.kind == "check") {
      std::cout << t.experiment << "  check " << s.metric << "  " << s.note << "  (" << s.mean << ")\n";
    }
  }
}

int run_experiment(const Common& common, const std::string& command) {
  auto cfg = resolve(common);
  ResultTable t;
  if (command == "lln-rate") t = exp_lln_rate(cfg);
  else if (command == "particle-rate") t = exp_particle_rate(cfg);
  else if (command == "clt-rate") t = exp_clt_rate(cfg);
  else if (command == "sgd-compare") t = exp_sgd_compare(cfg);
  else t = exp_commute(cfg);
  write_outputs(cfg.output, cfg, command, {t});
  print_summary(t);
  std::cout << "wrote " << cfg.output << "/results.csv (config " << t.config_hash << ")\n";
  return 0;
}

/// One coupled run at cfg.epsilon; stores every `stride`-th step.
int run_simulate(const Common& common, std::size_t stride) {
  auto cfg = resolve(common);
  cfg.validate();
  const auto inst = make_instance(cfg);
  const auto& c = *inst.coeffs;
  const auto seed = cfg.seed(0);
  const auto mu0 = sample_initial(inst.initial, cfg.particles, derive_seed(seed, stream::initial));
  const auto icfg = cfg.integrator(cfg.epsilon, stride);
  Trajectory tr;
  if (cfg.epsilon > 0.0) {
    const auto noise = NoisePath::generate(derive_seed(seed, stream::noise), cfg.dt, cfg.steps(), c.channels());
    tr = simulate(mu0, c, icfg, noise);
  } else {
    tr = simulate_transport(mu0, c, icfg);
  }
  std::filesystem::create_directories(cfg.output);
  save_trajectory(cfg.output + "/trajectory.csv", tr);

  ResultTable t;
  t.experiment = "simulate";
  t.config_hash = config_hash(cfg);
  t.add(cfg.epsilon, seed, "mass_defect", mass_defect(tr));
  t.add(cfg.epsilon, seed, "second_moment_sup", moment_track(tr, 2).sup);
  if (tr.initial().size() > 1) t.add(cfg.epsilon, seed, "min_pairwise_ratio", min_pairwise_distance(tr).ratio);
  write_outputs(cfg.output, cfg, "simulate", {t});
  std::cout << "wrote " << cfg.output << "/trajectory.csv (" << tr.size() << " snapshots, " << mu0.size()
            << " particles)\n";
  return 0;
}

/// Mini-batch SGD on the configured instance, stored as a trajectory on the time grid t = n alpha.
int run_sgd_cmd(const Common& common, double alpha, std::size_t batch, bool full_batch, std::size_t stride) {
  auto cfg = resolve(common);
  cfg.validate();
  const auto inst = make_instance(cfg);
  const auto seed = cfg.seed(0);
  const auto mu0 = sample_initial(inst.initial, cfg.particles, derive_seed(seed, stream::initial));
  SgdConfig sc;
  sc.alpha = alpha > 0.0 ? alpha : 1.0 / static_cast<double>(cfg.particles);
  sc.batch = batch;
  sc.full_batch = full_batch || cfg.sgd_full_batch;
  sc.seed = derive_seed(seed, stream::sgd);
  sc.snapshot_stride = stride;
  sc.steps = static_cast<std::size_t>(std::floor(cfg.horizon / sc.alpha + 1e-9));
  const auto res = run_sgd(*inst.coeffs, mu0, sc);

  Trajectory tr;
  tr.config.dt = sc.alpha;
  tr.config.horizon = static_cast<double>(sc.steps) * sc.alpha;
  tr.config.epsilon = sc.full_batch ? 0.0 : sc.alpha / static_cast<double>(sc.batch);
  tr.config.snapshot_stride = stride;
  tr.snapshots = res.snapshots;
  tr.steps = res.steps;
  std::filesystem::create_directories(cfg.output);
  save_trajectory(cfg.output + "/sgd-trajectory.csv", tr);

  ResultTable t;
  t.experiment = "sgd";
  t.config_hash = config_hash(cfg);
  t.add(sc.alpha, seed, "mass_defect", mass_defect(tr));
  t.add(sc.alpha, seed, "second_moment_sup", moment_track(tr, 2).sup);
  write_outputs(cfg.output, cfg, "sgd", {t});
  std::cout << "wrote " << cfg.output << "/sgd-trajectory.csv (" << sc.steps << " steps, alpha " << sc.alpha << ")\n";
  return 0;
}

struct DiagnoseArgs {
  std::string trajectory;
  std::string field;
  int order = 5;
  int k_max = 64;
  double box = 0.0;
};

/// Re-runs the diagnostics of a stored trajectory, regenerating its noise from
/// the recorded provenance. The coefficients come from the config.
int run_diagnose(const Common& common, const DiagnoseArgs& a) {
  auto cfg = resolve(common);
  std::vector<DiagnosticRow> rows;
  if (!a.trajectory.empty()) {
    const auto tr = load_trajectory(a.trajectory);
    const auto coeffs = build_coefficients(cfg.instance);
    const auto& c = *coeffs;
    if (tr.initial().dim() != c.dim()) throw Error("diagnose: trajectory dimension does not match the instance");
    const std::string subj = std::filesystem::path(a.trajectory).filename().string();
    const auto seed = tr.noise.seed;
    rows.push_back({subj, seed, "weights_conserved", weights_conserved(tr) ? 1.0 : 0.0});
    rows.push_back({subj, seed, "mass_defect", mass_defect(tr)});
    const auto m = moment_track(tr, 2);
    rows.push_back({subj, seed, "second_moment_sup", m.sup});
    rows.push_back({subj, seed, "second_moment_ratio", m.ratio});
    if (tr.initial().size() > 1) {
      const auto p = min_pairwise_distance(tr);
      rows.push_back({subj, seed, "min_pairwise_ratio", p.ratio});
    }
    for (int n = 2; n <= 4; ++n) {
      try {
        rows.push_back({subj, seed, "F" + std::to_string(n) + "_final", f_n_functional(tr.final(), n)});
      } catch (const Error& e) {
        warn(std::string("diagnose: ") + e.what());
      }
    }
    const bool every_step = tr.size() == tr.config.steps() + 1;
    const bool noisy = tr.config.epsilon > 0.0;
    if (every_step && (!noisy || tr.noise.present)) {
      std::optional<NoisePath> noise;
      if (noisy) noise = NoisePath::regenerate(tr.noise, c.channels());
      const auto panel = panel::standard(c.dim());
      const auto res = smfe_weak_residual(tr, noise ? &*noise : nullptr, c, panel);
      for (std::size_t f = 0; f < panel.size(); ++f) rows.push_back({subj, seed, "weak_residual:" + panel[f].name, res[f]});
      if (noisy) {
        const auto q = qv_check(tr, c, find_test_function(panel, cfg.test_function));
        rows.push_back({subj, seed, "qv_realized:" + cfg.test_function, q.realized});
        rows.push_back({subj, seed, "qv_predicted:" + cfg.test_function, q.predicted});
      }
    } else {
      warn("diagnose: weak residual and quadratic variation need every step stored and a noise provenance");
    }
  }
  if (!a.field.empty()) {
    std::ifstream in(a.field);
    if (!in) throw Error("cannot open '" + a.field + "'");
    const auto f = read_field(in);
    SpectralGrid grid;
    grid.order = a.order;
    grid.k_max = a.k_max;
    grid.half_width = a.box;
    if (!(grid.half_width > 0.0)) {
      std::vector<const PointSet*> clouds;
      if (f.atoms.size()) clouds.push_back(&f.atoms);
      if (f.base.size()) clouds.push_back(&f.base);
      grid.half_width = box_half_width(clouds, cfg.box_margin);
    }
    const auto r = sobolev_neg_norm(f, grid);
    const std::string subj = std::filesystem::path(a.field).filename().string();
    rows.push_back({subj, 0, "hminus_norm", r.norm});
    rows.push_back({subj, 0, "tail_bound", r.tail_bound});
    rows.push_back({subj, 0, "box_half_width", grid.half_width});
  }
  if (rows.empty()) throw Error("diagnose: give --trajectory and/or --field");
  std::filesystem::create_directories(cfg.output);
  std::ofstream out(cfg.output + "/diagnostics.csv");
  write_report(out, rows);
  write_report(std::cout, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic mean-field simulation and convergence experiments"};
  app.require_subcommand(1);
  Common common;

  auto* sim = app.add_subcommand("simulate", "one noisy particle run; writes trajectory.csv");
  add_common(sim, common);
  std::size_t sim_stride = 1;
  sim->add_option("--stride", sim_stride, "store every n-th step")->check(CLI::PositiveNumber);

  auto* sgd = app.add_subcommand("sgd", "mini-batch SGD on the instance; writes sgd-trajectory.csv");
  add_common(sgd, common);
  double alpha = 0.0;
  std::size_t batch = 1, sgd_stride = 1;
  bool full_batch = false;
  sgd->add_option("--alpha", alpha, "learning rate (default 1/particles)");
  sgd->add_option("--batch", batch, "samples per step")->check(CLI::PositiveNumber);
  sgd->add_option("--stride", sgd_stride, "store every n-th step")->check(CLI::PositiveNumber);
  sgd->add_flag("--full-batch", full_batch, "use the exact data average");

  std::vector<std::pair<std::string, CLI::App*>> experiments;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"lln-rate", "E sup_t W2^2 between noisy and noiseless runs against eps"},
           {"particle-rate", "sampling rate in M and coupled dynamic amplification"},
           {"clt-rate", "E sup_t ||eta^eps - eta||^2 in H^-J against eps"},
           {"sgd-compare", "SGD with alpha = 1/M against the eps = 1/M equation"},
           {"commute", "W2 at time T on the (M, alpha) grid"}}) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, common);
    experiments.emplace_back(name, sub);
  }

  auto* diag = app.add_subcommand("diagnose", "diagnostics of a stored trajectory and/or field");
  add_common(diag, common);
  DiagnoseArgs da;
  diag->add_option("--trajectory", da.trajectory, "trajectory file from simulate")->check(CLI::ExistingFile);
  diag->add_option("--field", da.field, "signed field file")->check(CLI::ExistingFile);
  diag->add_option("--order", da.order, "Sobolev order J");
  diag->add_option("--kmax", da.k_max, "frequency cutoff per axis");
  diag->add_option("--box", da.box, "spectral box half width (default: sized from the field)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return run_simulate(common, sim_stride);
    if (*sgd) return run_sgd_cmd(common, alpha, batch, full_batch, sgd_stride);
    if (*diag) return run_diagnose(common, da);
    for (const auto& [name, sub] : experiments)
      if (*sub) return run_experiment(common, name);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
