// Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any failure.
// Usage: acceptance [criterion ...] [--out DIR]

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>

#include "smfe/smfe.hpp"

using namespace smfe;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string out_dir = "acceptance_out";

NetworkCoefficients reference_network() { return NetworkCoefficients(reference_dataset(), Activation::from_name("tanh")); }

ParticleEnsemble reference_initial(std::size_t n, std::uint64_t seed) {
  return sample_initial(UniformBox{{-1.0, -1.0}, {1.0, 1.0}}, n, seed);
}

IntegratorConfig integrator(double dt, double eps, std::size_t stride) {
  IntegratorConfig c;
  c.dt = dt;
  c.horizon = 1.0;
  c.epsilon = eps;
  c.snapshot_stride = stride;
  return c;
}

TestFunction named(const std::string& name) {
  for (auto& f : panel::standard(2))
    if (f.name == name) return f;
  throw Error("no test function " + name);
}

/// Mass audit over every trajectory produced by the direct criteria below.
struct MassAudit {
  std::size_t trajectories = 0;
  std::size_t snapshots = 0;
  std::size_t violations = 0;
  double worst_defect = 0.0;

  void operator()(const Trajectory& tr) {
    ++trajectories;
    snapshots += tr.size();
    const double m0 = tr.initial().mass();
    for (const auto& s : tr.snapshots)
      if (s.mass() != m0) ++violations;
    if (!weights_conserved(tr)) ++violations;
    worst_defect = std::max(worst_defect, mass_defect(tr));
  }
} audit;

void save(const ExperimentConfig& cfg, const std::string& command, const ResultTable& t) {
  write_outputs(out_dir + "/" + command, cfg, command, {t});
}

ExperimentConfig reference_config() {
  ExperimentConfig c;
  c.threads = 1;
  return c;
}

// ---------------------------------------------------------------------------

Outcome weak_residual_order() {
  const auto c = reference_network();
  const auto panel = panel::standard(2);
  const std::vector<double> dts{4e-3, 2e-3, 1e-3};
  const std::size_t fine_steps = 1000;
  const double eps = 1e-3;
  const int seeds = 20;
  Vec mean_abs(dts.size(), 0.0);
  for (int s = 0; s < seeds; ++s) {
    const auto init = reference_initial(200, derive_seed(7000 + s, stream::initial));
    const auto fine = NoisePath::generate(derive_seed(7000 + s, stream::noise), 1e-3, fine_steps, c.channels());
    for (std::size_t j = 0; j < dts.size(); ++j) {
      const auto factor = static_cast<std::size_t>(std::llround(dts[j] / 1e-3));
      const auto noise = factor == 1 ? fine : fine.coarsened(factor);
      const auto tr = simulate(init, c, integrator(dts[j], eps, 1), noise);
      audit(tr);
      for (double r : smfe_weak_residual(tr, &noise, c, panel))
        mean_abs[j] += std::abs(r) / static_cast<double>(seeds * panel.size());
    }
  }
  const auto fit = stats::fit_slope(dts, mean_abs);
  return {fit.slope >= 0.7 && fit.slope <= 1.3,
          fmt("slope %.3f in [0.7, 1.3]; mean |R| %.3e %.3e %.3e", fit.slope, mean_abs[0], mean_abs[1], mean_abs[2])};
}

Outcome quadratic_variation() {
  const auto c = reference_network();
  const auto phi = named("bump0");
  const int seeds = 50;
  double ratio = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto noise = NoisePath::generate(derive_seed(8000 + s, stream::noise), 1e-3, 1000, c.channels());
    const auto tr = simulate(reference_initial(200, derive_seed(8000 + s, stream::initial)), c,
                             integrator(1e-3, 1e-2, 1), noise);
    audit(tr);
    const auto q = qv_check(tr, c, phi);
    ratio += q.realized / q.predicted / seeds;
  }
  return {std::abs(ratio - 1.0) <= 0.2, fmt("realized/predicted %.4f within 1 +- 0.2 over %d seeds", ratio, seeds)};
}

Outcome lln_rate() {
  auto cfg = reference_config();
  const auto t = exp_lln_rate(cfg);
  save(cfg, "lln-rate", t);
  const auto* f = t.find("fit", "sup_w2_sq");
  const bool failures = t.rows.size() != cfg.replicas * cfg.epsilons.size();
  return {!failures && std::abs(f->slope - 1.0) <= 0.25,
          fmt("slope %.3f (90%% CI [%.3f, %.3f]) target 1 +- 0.25", f->slope, f->slope_low, f->slope_high)};
}

Outcome sampling_rate() {
  auto cfg = reference_config();
  cfg.instance.kind = "interacting-1d";
  cfg.instance.initial.kind = "uniform";
  cfg.instance.initial.lo = {0.0};
  cfg.instance.initial.hi = {1.0};
  cfg.sizes = {25, 50, 100, 200, 400};
  cfg.replicas = 200;
  cfg.amplification_replicas = 30;
  cfg.reference_particles = 8000;
  const auto t = exp_particle_rate(cfg);
  save(cfg, "particle-rate", t);
  const auto* f = t.find("fit", "w2_sq_initial");
  const auto* spread = t.find("check", "amplification_spread");
  const bool slope_ok = std::abs(f->slope + 1.0) <= 0.2;
  std::string amp, fin;
  for (double m : cfg.sizes) {
    amp += fmt(" %.3f", t.find("cell", "amplification", m)->mean);
    fin += fmt(" %.3f", t.find("cell", "amplification_final", m)->mean);
  }
  return {slope_ok && spread->count == 1,
          fmt("slope %.3f target -1 +- 0.2; amplification%s, max/min %.3f (<= 3); final-time ratio%s", f->slope,
              amp.c_str(), spread->mean, fin.c_str())};
}

Outcome clt_rate() {
  auto cfg = reference_config();
  const auto t = exp_clt_rate(cfg);
  save(cfg, "clt-rate", t);
  const auto* f = t.find("fit", "sup_hminus_sq");
  const bool complete = t.values("sup_hminus_sq", cfg.epsilons[0]).size() == cfg.replicas;
  return {complete && std::abs(f->slope - 1.0) <= 0.3,
          fmt("slope %.3f (90%% CI [%.3f, %.3f]) target 1 +- 0.3, J=%d", f->slope, f->slope_low, f->slope_high,
              cfg.sobolev_order)};
}

/// V = 0 with position-dependent noise on three channels; the noise does not see the measure.
SyntheticCoefficients pure_noise() {
  SyntheticSpec s;
  s.dim = 2;
  s.channel_weights = {0.2, 0.3, 0.5};
  s.noise = [](std::span<const double> x, std::span<const double>, std::span<double> o) {
    o[0] = 0.5 * std::cos(x[0]);
    o[1] = 0.2;
    o[2] = -0.3 * x[1];
    o[3] = 0.4 * std::sin(x[0] + x[1]);
    o[4] = 0.1;
    o[5] = -0.6;
  };
  return SyntheticCoefficients(std::move(s));
}

Outcome fluctuation_law() {
  const int seeds = 200;
  bool pass = true;
  std::string detail;
  {
    const auto c = pure_noise();
    const auto init = reference_initial(200, 31);
    const auto cfg = integrator(1e-2, 0.0, 100);
    const auto w = c.channel_weights();
    double worst = 0.0;
    for (const auto& phi : panel::bounded(2)) {
      Vec s;
      for (int k = 0; k < seeds; ++k)
        s.push_back(pair(simulate_tangent(init, c, cfg, NoisePath::generate(9000 + k, 1e-2, 100, 3)).final().field(), phi));
      double predicted = 0.0;
      for (std::size_t p = 0; p < w.size(); ++p) {
        double m = 0.0;
        for (std::size_t i = 0; i < init.size(); ++i) {
          const auto g = c.noise_matrix(init.atoms[i], init);
          m += init.weights[i] * dot(phi.grad(init.atoms[i]), std::span<const double>(g.a.data() + p * 2, 2));
        }
        predicted += w[p] * m * m;
      }
      if (predicted == 0.0) {
        pass = pass && stats::variance(s) == 0.0;
        continue;
      }
      const double z = std::abs(stats::variance(s) - predicted) / stats::variance_standard_error(s);
      worst = std::max(worst, z);
      pass = pass && z <= 3.0;
    }
    detail += fmt("variance worst |z| %.2f (<= 3)", worst);
  }
  {
    const auto c = reference_network();
    const auto init = reference_initial(200, 32);
    const auto cfg = integrator(1e-2, 0.0, 100);
    const auto panel = panel::standard(2);
    std::vector<Vec> samples(panel.size());
    for (int k = 0; k < seeds; ++k) {
      const auto tan = simulate_tangent(init, c, cfg, NoisePath::generate(9500 + k, 1e-2, 100, c.channels()));
      for (std::size_t f = 0; f < panel.size(); ++f) samples[f].push_back(pair(tan.final().field(), panel[f]));
    }
    double skew = 0.0, kurt = 0.0;
    for (std::size_t f = 0; f < panel.size(); ++f) {
      if (panel[f].name == "const") continue;
      skew = std::max(skew, std::abs(stats::skewness(samples[f])));
      kurt = std::max(kurt, std::abs(stats::excess_kurtosis(samples[f])));
    }
    pass = pass && skew <= 0.35 && kurt <= 0.7;
    detail += fmt("; reference panel max |skew| %.3f (<= 0.35), max |excess kurtosis| %.3f (<= 0.7)", skew, kurt);
  }
  return {pass, detail};
}

Outcome no_collision() {
  const auto c = reference_network();
  const int seeds = 50;
  double worst = std::numeric_limits<double>::infinity();
  for (int s = 0; s < seeds; ++s) {
    const auto noise = NoisePath::generate(derive_seed(10000 + s, stream::noise), 1e-3, 1000, c.channels());
    const auto tr = simulate(reference_initial(200, derive_seed(10000 + s, stream::initial)), c,
                             integrator(1e-3, 1e-1, 1), noise);
    audit(tr);
    worst = std::min(worst, min_pairwise_distance(tr).ratio);
  }
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0), wd(0.05, 1.0);
  std::size_t nonzero = 0;
  const int trials = 1000;
  for (int k = 0; k < trials; ++k) {
    // Two distinct locations spread over up to 12 atoms with random weights.
    const std::size_t n = 2 + static_cast<std::size_t>(k % 11);
    const Vec a{u(gen), u(gen)}, b{u(gen), u(gen)};
    PointSet pts(n, 2);
    Vec w(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec& z = (i % 2 == 0) ? a : b;
      pts[i][0] = z[0];
      pts[i][1] = z[1];
      w[i] = wd(gen);
      total += w[i];
    }
    for (double& x : w) x /= total;
    if (f_n_functional(EmpiricalMeasure(std::move(pts), std::move(w)), 3) != 0.0) ++nonzero;
  }
  return {worst > 1e-6 && nonzero == 0,
          fmt("min pairwise ratio %.3e (> 1e-6) over %d seeds; F3 nonzero on %zu of %d two-atom measures", worst, seeds,
              nonzero, trials)};
}

Outcome picard_contraction() {
  const auto c = reference_network();
  const double tol = 1e-4;
  bool pass = true;
  double worst_ratio = 0.0, worst_gap = 0.0;
  std::size_t iters = 0;
  for (int s = 0; s < 5; ++s) {
    const auto init = reference_initial(200, derive_seed(12000 + s, stream::initial));
    const auto noise = NoisePath::generate(derive_seed(12000 + s, stream::noise), 1e-3, 1000, c.channels());
    const auto cfg = integrator(1e-3, 1e-2, 50);
    const auto pr = picard_solve(init, c, cfg, noise, tol, 30);
    const auto direct = simulate(init, c, cfg, noise);
    audit(pr.trajectory);
    audit(direct);
    pass = pass && pr.converged;
    for (std::size_t k = 2; k < pr.gaps.size(); ++k) worst_ratio = std::max(worst_ratio, pr.gaps[k] / pr.gaps[k - 1]);
    double gap = 0.0;
    for (std::size_t k = 0; k < direct.size(); ++k)
      gap = std::max(gap, w2_distance(direct.snapshots[k], pr.trajectory.snapshots[k]));
    worst_gap = std::max(worst_gap, gap);
    iters = std::max(iters, pr.gaps.size());
  }
  pass = pass && worst_ratio < 0.9 && worst_gap < 2.0 * tol;
  return {pass, fmt("worst gap ratio after iteration 2 %.3f (< 0.9); sup_t W2 to direct run %.3e (< %.0e); <= %zu iterations",
                    worst_ratio, worst_gap, 2.0 * tol, iters)};
}

Outcome sgd_trend() {
  auto cfg = reference_config();
  cfg.sizes = {50, 100, 200};
  cfg.replicas = 100;
  cfg.test_function = "bump0";
  SgdCompareGate gate;
  const auto t = exp_sgd_compare(cfg, &gate);
  save(cfg, "sgd-compare", t);
  std::string s = "sqrt(M) gap";
  for (double v : gate.scaled) s += fmt(" %.4f", v);
  s += "; 5% quantile of successive differences";
  for (double q : gate.diff_q05) s += fmt(" %.4f", q);
  s += " (<= 0)";
  return {gate.pass, s};
}

Outcome mass_conservation() {
  // Also covers one noisy run of each experiment instance on its own.
  for (const char* kind : {"reference", "interacting-1d", "single-atom"}) {
    InstanceConfig ic;
    ic.kind = kind;
    if (std::string(kind) == "interacting-1d") {
      ic.initial.lo = {0.0};
      ic.initial.hi = {1.0};
    }
    const auto coeffs = build_coefficients(ic);
    const auto init = sample_initial(initial_spec(ic.initial), 97, 13);
    const auto noise = NoisePath::generate(13, 1e-3, 1000, coeffs->channels());
    audit(simulate(init, *coeffs, integrator(1e-3, 1e-1, 1), noise));
  }
  return {audit.violations == 0,
          fmt("%zu trajectories, %zu snapshots, %zu violations; max |<1,mu_t> - 1| %.1e", audit.trajectories,
              audit.snapshots, audit.violations, audit.worst_defect)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      out_dir = argv[++i];
    } else {
      try {
        only.insert(std::stoi(a));
      } catch (const std::exception&) {
        std::fprintf(stderr, "usage: acceptance [criterion ...] [--out DIR]\n");
        return 2;
      }
    }
  }
  // Mass conservation runs last so that its audit covers the other criteria's trajectories.
  const std::vector<std::tuple<int, const char*, std::function<Outcome()>>> criteria{
      {2, "weak-form residual order", weak_residual_order},
      {3, "quadratic variation identity", quadratic_variation},
      {4, "LLN rate", lln_rate},
      {5, "sampling rate and amplification", sampling_rate},
      {6, "quantified CLT rate", clt_rate},
      {7, "fluctuation Gaussianity and variance", fluctuation_law},
      {8, "no collision and atomic invariance", no_collision},
      {9, "Picard contraction", picard_contraction},
      {10, "SGD approximation trend", sgd_trend},
      {1, "mass conservation", mass_conservation},
  };
  std::map<int, std::string> lines;
  bool all = true;
  for (const auto& [id, name, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    lines[id] = fmt("%s criterion %2d  %-38s %s [%.0f s]", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fprintf(stderr, "%s\n", lines[id].c_str());
    all = all && o.pass;
  }
  for (const auto& [id, line] : lines) std::printf("%s\n", line.c_str());
  return all ? 0 : 1;
}
