#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "smfe/coefficients.hpp"
#include "smfe/config.hpp"
#include "smfe/core.hpp"
#include "smfe/dynamics.hpp"
#include "smfe/fields.hpp"
#include "smfe/fluctuations.hpp"
#include "smfe/stats.hpp"
#include "smfe/test_functions.hpp"
#include "smfe/wasserstein.hpp"

namespace smfe {

inline constexpr int kResultSchemaVersion = 1;

// Seed streams derived from the replica seed.
namespace stream {
inline constexpr std::uint64_t initial = 0;
inline constexpr std::uint64_t noise = 1;
inline constexpr std::uint64_t reference = 2;
inline constexpr std::uint64_t sgd = 3;
}  // namespace stream

/// Runs fn(i) for i < n on up to `threads` workers. Each index must write only
/// its own output slot, so results never depend on the worker count. The first
/// exception (lowest index) is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(n);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += threads) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

struct ResultRow {
  std::string experiment;
  double param = 0.0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

/// Summary entry: a per-cell mean (kind "cell"), a slope fit ("fit") or a gate ("check").
struct SummaryRow {
  std::string experiment;
  std::string kind;
  std::string metric;
  double param = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stderr_ = std::numeric_limits<double>::quiet_NaN();
  double slope = std::numeric_limits<double>::quiet_NaN();
  double slope_low = std::numeric_limits<double>::quiet_NaN();
  double slope_high = std::numeric_limits<double>::quiet_NaN();
  std::string note;
};

struct ResultTable {
  std::string experiment;
  std::string config_hash;
  std::vector<ResultRow> rows;
  std::vector<SummaryRow> summary;

  void add(double param, std::uint64_t seed, const std::string& metric, double value) {
    rows.push_back({experiment, param, seed, metric, value});
  }

  SummaryRow& add_cell(const std::string& metric, double param, std::span<const double> values) {
    SummaryRow s;
    s.experiment = experiment;
    s.kind = "cell";
    s.metric = metric;
    s.param = param;
    s.count = values.size();
    if (!values.empty()) {
      s.mean = stats::mean(values);
      s.stderr_ = stats::standard_error(values);
    }
    summary.push_back(s);
    return summary.back();
  }

  SummaryRow& add_fit(const std::string& metric, const stats::SlopeFit& f) {
    SummaryRow s;
    s.experiment = experiment;
    s.kind = "fit";
    s.metric = metric;
    s.count = f.points;
    s.slope = f.slope;
    s.slope_low = f.ci_low;
    s.slope_high = f.ci_high;
    s.mean = f.intercept;
    if (f.degenerate) s.note = "degenerate";
    summary.push_back(s);
    return summary.back();
  }

  SummaryRow& add_check(const std::string& metric, bool pass, double value, const std::string& note = {}) {
    SummaryRow s;
    s.experiment = experiment;
    s.kind = "check";
    s.metric = metric;
    s.mean = value;
    s.count = pass ? 1 : 0;
    s.note = note.empty() ? (pass ? "pass" : "fail") : note;
    summary.push_back(s);
    return summary.back();
  }

  const SummaryRow* find(const std::string& kind, const std::string& metric, std::optional<double> param = {}) const {
    for (const auto& s : summary)
      if (s.kind == kind && s.metric == metric && (!param || s.param == *param)) return &s;
    return nullptr;
  }

  std::vector<double> values(const std::string& metric, double param) const {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.metric == metric && r.param == param) v.push_back(r.value);
    return v;
  }
};

namespace detail {

inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

}  // namespace detail

inline void write_results(std::ostream& out, const std::vector<ResultTable>& tables) {
  out << "experiment,param,seed,metric,value\n";
  for (const auto& t : tables)
    for (const auto& r : t.rows)
      out << r.experiment << ',' << detail::fmt_num(r.param) << ',' << r.seed << ',' << r.metric << ','
          << detail::fmt_num(r.value) << '\n';
}

inline void write_summary(std::ostream& out, const std::vector<ResultTable>& tables) {
  out << "experiment,kind,metric,param,count,mean,stderr,slope,slope_low,slope_high,note,config_hash,code_version\n";
  for (const auto& t : tables)
    for (const auto& s : t.summary)
      out << s.experiment << ',' << s.kind << ',' << s.metric << ',' << detail::fmt_num(s.param) << ',' << s.count
          << ',' << detail::fmt_num(s.mean) << ',' << detail::fmt_num(s.stderr_) << ','
          << detail::fmt_num(s.slope) << ',' << detail::fmt_num(s.slope_low) << ','
          << detail::fmt_num(s.slope_high) << ',' << s.note << ',' << t.config_hash << ',' << kCodeVersion << '\n';
}

inline json run_meta(const ExperimentConfig& cfg, const std::string& command) {
  return {{"command", command},
          {"config", to_json(cfg)},
          {"config_hash", config_hash(cfg)},
          {"code_version", kCodeVersion},
          {"schema_version", kResultSchemaVersion},
          {"results_header", "experiment,param,seed,metric,value"}};
}

/// Writes results.csv, summary.csv and run-meta.json into `dir`.
inline void write_outputs(const std::string& dir, const ExperimentConfig& cfg, const std::string& command,
                          const std::vector<ResultTable>& tables) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path p(dir);
  {
    std::ofstream f(p / "results.csv");
    if (!f) throw Error("cannot write results.csv in '" + dir + "'");
    write_results(f, tables);
  }
  {
    std::ofstream f(p / "summary.csv");
    write_summary(f, tables);
  }
  {
    std::ofstream f(p / "run-meta.json");
    f << run_meta(cfg, command).dump(2) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

struct Instance {
  std::unique_ptr<CoefficientSet> coeffs;
  InitialSpec initial;
};

inline Instance make_instance(const ExperimentConfig& cfg) {
  Instance in;
  in.coeffs = build_coefficients(cfg.instance);
  in.initial = initial_spec(cfg.instance.initial);
  return in;
}

inline double sup_w2_squared(const Trajectory& a, const Trajectory& b) {
  if (a.steps != b.steps) throw Error("sup_w2_squared: snapshot grids differ");
  double m = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    const double w = w2_distance(a.snapshots[s], b.snapshots[s]);
    m = std::max(m, w * w);
  }
  return m;
}

/// Half-width of a centred box containing every point with a margin of
/// `margin` times the bounding-box diameter.
inline double box_half_width(const std::vector<const PointSet*>& clouds, double margin) {
  double max_abs = 0.0;
  Vec lo, hi;
  for (const auto* c : clouds)
    for (std::size_t i = 0; i < c->size(); ++i) {
      const auto x = (*c)[i];
      if (lo.empty()) {
        lo.assign(x.begin(), x.end());
        hi = lo;
      }
      for (std::size_t k = 0; k < x.size(); ++k) {
        max_abs = std::max(max_abs, std::abs(x[k]));
        lo[k] = std::min(lo[k], x[k]);
        hi[k] = std::max(hi[k], x[k]);
      }
    }
  double diam = 0.0;
  for (std::size_t k = 0; k < lo.size(); ++k) diam += (hi[k] - lo[k]) * (hi[k] - lo[k]);
  diam = std::sqrt(diam);
  return max_abs + margin * std::max(diam, 1e-12) + 1e-12;
}

inline const TestFunction& find_test_function(const std::vector<TestFunction>& panel, const std::string& name) {
  for (const auto& f : panel)
    if (f.name == name) return f;
  throw Error("unknown test function '" + name + "'");
}

/// Number of grid points with value above its predecessor in a sequence expected to decrease.
inline std::size_t count_inversions(std::span<const double> xs) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[i - 1]) ++n;
  return n;
}

inline stats::SlopeFit fit_grid(const ExperimentConfig& cfg, std::span<const double> params,
                                const std::vector<Vec>& samples) {
  Vec means;
  for (const auto& s : samples) means.push_back(s.empty() ? 0.0 : stats::mean(s));
  bool all_zero = true;
  for (double m : means) all_zero = all_zero && m == 0.0;
  if (all_zero || params.size() < 3) {
    stats::SlopeFit f;
    f.degenerate = true;
    return f;
  }
  return stats::fit_slope(params, samples, 0.9, cfg.bootstrap, cfg.base_seed);
}

// ---------------------------------------------------------------------------
// LLN rate
// ---------------------------------------------------------------------------

/// E sup_t W2^2(mu^eps_t, mu^0_t) for each eps, with shared initial atoms and
/// one noise path per replica; log-log slope against eps.
inline ResultTable exp_lln_rate(const ExperimentConfig& cfg) {
  cfg.validate(true);
  const auto inst = make_instance(cfg);
  const auto& c = *inst.coeffs;
  ResultTable t;
  t.experiment = "lln-rate";
  t.config_hash = config_hash(cfg);
  const std::size_t E = cfg.epsilons.size(), R = cfg.replicas;
  std::vector<Vec> cell(R, Vec(E, std::numeric_limits<double>::quiet_NaN()));
  std::vector<std::string> errors(R);
  parallel_for(R, cfg.threads, [&](std::size_t r) {
    const auto seed = cfg.seed(r);
    try {
      const auto mu0 = sample_initial(inst.initial, cfg.particles, derive_seed(seed, stream::initial));
      const auto noise = NoisePath::generate(derive_seed(seed, stream::noise), cfg.dt, cfg.steps(), c.channels());
      const auto base = simulate_transport(mu0, c, cfg.integrator(0.0, cfg.snapshot_stride));
      for (std::size_t e = 0; e < E; ++e) {
        const auto tr = simulate(mu0, c, cfg.integrator(cfg.epsilons[e], cfg.snapshot_stride), noise);
        cell[r][e] = sup_w2_squared(tr, base);
      }
    } catch (const Error& ex) {
      errors[r] = ex.what();
    }
  });
  std::vector<Vec> samples(E);
  for (std::size_t r = 0; r < R; ++r) {
    if (!errors[r].empty()) {
      warn("lln-rate: replica seed " + std::to_string(cfg.seed(r)) + " failed: " + errors[r]);
      t.add(std::numeric_limits<double>::quiet_NaN(), cfg.seed(r), "failure", 1.0);
      continue;
    }
    for (std::size_t e = 0; e < E; ++e) {
      t.add(cfg.epsilons[e], cfg.seed(r), "sup_w2_sq", cell[r][e]);
      samples[e].push_back(cell[r][e]);
    }
  }
  for (std::size_t e = 0; e < E; ++e) t.add_cell("sup_w2_sq", cfg.epsilons[e], samples[e]);
  t.add_fit("sup_w2_sq", fit_grid(cfg, cfg.epsilons, samples));
  return t;
}

// ---------------------------------------------------------------------------
// Particle sampling rate and dynamic amplification
// ---------------------------------------------------------------------------

/// (a) E W2^2(mu_0^M, mu_0) against M, using the closed-form quantile distance
/// for a 1-D uniform initial law and a large reference ensemble otherwise.
/// (b) E sup_t W2^2(mu^M_t, mu^ref_t) / E W2^2(mu^M_0, mu^ref_0) with one noise
/// path shared by the M-particle and the reference ensembles.
inline ResultTable exp_particle_rate(const ExperimentConfig& cfg) {
  cfg.validate(true);
  const auto inst = make_instance(cfg);
  const auto& c = *inst.coeffs;
  ResultTable t;
  t.experiment = "particle-rate";
  t.config_hash = config_hash(cfg);
  const std::size_t G = cfg.sizes.size(), R = cfg.replicas, NR = cfg.reference_size();
  const auto& ic = cfg.instance.initial;
  const bool closed_form = ic.kind == "uniform" && ic.lo.size() == 1;
  Vec params(cfg.sizes.begin(), cfg.sizes.end());

  std::vector<Vec> samp(R, Vec(G));
  parallel_for(R, cfg.threads, [&](std::size_t r) {
    const auto seed = cfg.seed(r);
    std::optional<ParticleEnsemble> ref;
    if (!closed_form) ref = sample_initial(inst.initial, NR, derive_seed(seed, stream::reference));
    for (std::size_t g = 0; g < G; ++g) {
      const auto mu = sample_initial(inst.initial, cfg.sizes[g], derive_seed(seed, stream::initial));
      if (closed_form) {
        samp[r][g] = w2_squared_to_uniform(mu, ic.lo[0], ic.hi[0]);
      } else {
        const double w = w2_distance(mu, *ref);
        samp[r][g] = w * w;
      }
    }
  });
  std::vector<Vec> by_size(G);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t g = 0; g < G; ++g) {
      t.add(params[g], cfg.seed(r), "w2_sq_initial", samp[r][g]);
      by_size[g].push_back(samp[r][g]);
    }
  for (std::size_t g = 0; g < G; ++g) t.add_cell("w2_sq_initial", params[g], by_size[g]);
  t.add_fit("w2_sq_initial", fit_grid(cfg, params, by_size));

  // Dynamic amplification.
  const std::size_t RA = cfg.amplification_replicas;
  std::vector<Vec> init_d(RA, Vec(G)), dyn_d(RA, Vec(G)), end_d(RA, Vec(G));
  std::vector<std::string> errors(RA);
  const auto icfg = cfg.integrator(cfg.epsilon, cfg.snapshot_stride);
  parallel_for(RA, cfg.threads, [&](std::size_t r) {
    const auto seed = cfg.seed(r);
    try {
      const auto noise = NoisePath::generate(derive_seed(seed, stream::noise), cfg.dt, cfg.steps(), c.channels());
      const auto ref0 = sample_initial(inst.initial, NR, derive_seed(seed, stream::reference));
      const auto ref = simulate(ref0, c, icfg, noise);
      for (std::size_t g = 0; g < G; ++g) {
        const auto mu0 = sample_initial(inst.initial, cfg.sizes[g], derive_seed(seed, stream::initial));
        const auto tr = simulate(mu0, c, icfg, noise);
        const double w0 = w2_distance(mu0, ref0);
        init_d[r][g] = w0 * w0;
        dyn_d[r][g] = sup_w2_squared(tr, ref);
        const double wt = w2_distance(tr.final(), ref.final());
        end_d[r][g] = wt * wt;
      }
    } catch (const Error& ex) {
      errors[r] = ex.what();
    }
  });
  Vec ratios;
  for (std::size_t g = 0; g < G; ++g) {
    Vec a, b, e;
    for (std::size_t r = 0; r < RA; ++r) {
      if (!errors[r].empty()) continue;
      t.add(params[g], cfg.seed(r), "w2_sq_initial_coupled", init_d[r][g]);
      t.add(params[g], cfg.seed(r), "sup_w2_sq_dynamic", dyn_d[r][g]);
      t.add(params[g], cfg.seed(r), "w2_sq_final", end_d[r][g]);
      a.push_back(init_d[r][g]);
      b.push_back(dyn_d[r][g]);
      e.push_back(end_d[r][g]);
    }
    t.add_cell("w2_sq_initial_coupled", params[g], a);
    t.add_cell("sup_w2_sq_dynamic", params[g], b);
    t.add_cell("w2_sq_final", params[g], e);
    const double ratio = a.empty() ? std::numeric_limits<double>::quiet_NaN() : stats::mean(b) / stats::mean(a);
    ratios.push_back(ratio);
    auto& s = t.add_cell("amplification", params[g], {});
    s.mean = ratio;
    s.count = a.size();
    auto& sf = t.add_cell("amplification_final", params[g], {});
    sf.mean = a.empty() ? std::numeric_limits<double>::quiet_NaN() : stats::mean(e) / stats::mean(a);
    sf.count = a.size();
  }
  for (std::size_t r = 0; r < RA; ++r)
    if (!errors[r].empty()) {
      warn("particle-rate: replica seed " + std::to_string(cfg.seed(r)) + " failed: " + errors[r]);
      t.add(std::numeric_limits<double>::quiet_NaN(), cfg.seed(r), "failure", 1.0);
    }
  const double hi = *std::max_element(ratios.begin(), ratios.end());
  const double lo = *std::min_element(ratios.begin(), ratios.end());
  t.add_check("amplification_spread", hi <= 3.0 * lo, hi / lo, hi <= 3.0 * lo ? "within x3" : "outside x3");
  return t;
}

// ---------------------------------------------------------------------------
// CLT rate
// ---------------------------------------------------------------------------

/// E sup_t ||eta^eps_t - eta_t||^2_{-J} for each eps, with the tangent
/// solver driven by the same noise and the spectral box sized per replica.
inline ResultTable exp_clt_rate(const ExperimentConfig& cfg) {
  cfg.validate(true);
  const auto inst = make_instance(cfg);
  const auto& c = *inst.coeffs;
  ResultTable t;
  t.experiment = "clt-rate";
  t.config_hash = config_hash(cfg);
  const int req = SpectralGrid::required_order(c.dim());
  if (cfg.sobolev_order < req)
    throw Error("clt-rate: Sobolev order " + std::to_string(cfg.sobolev_order) + " below required " +
                std::to_string(req));
  const std::size_t E = cfg.epsilons.size(), R = cfg.replicas;
  std::vector<Vec> cell(R, Vec(E));
  Vec box(R);
  std::vector<std::string> errors(R);
  parallel_for(R, cfg.threads, [&](std::size_t r) {
    const auto seed = cfg.seed(r);
    try {
      const auto mu0 = sample_initial(inst.initial, cfg.particles, derive_seed(seed, stream::initial));
      const auto noise = NoisePath::generate(derive_seed(seed, stream::noise), cfg.dt, cfg.steps(), c.channels());
      const auto tangent = simulate_tangent(mu0, c, cfg.integrator(0.0, cfg.snapshot_stride), noise);
      std::vector<Trajectory> noisy;
      for (double eps : cfg.epsilons) noisy.push_back(simulate(mu0, c, cfg.integrator(eps, cfg.snapshot_stride), noise));
      std::vector<const PointSet*> clouds;
      for (const auto& s : tangent.snapshots) clouds.push_back(&s.base);
      for (const auto& tr : noisy)
        for (const auto& s : tr.snapshots) clouds.push_back(&s.atoms);
      SpectralGrid grid;
      grid.half_width = box_half_width(clouds, cfg.box_margin);
      grid.k_max = cfg.k_max;
      grid.order = cfg.sobolev_order;
      box[r] = grid.half_width;
      for (std::size_t e = 0; e < E; ++e) {
        const auto d = clt_distance(noisy[e], tangent, cfg.epsilons[e], grid);
        cell[r][e] = d.sup * d.sup;
      }
    } catch (const Error& ex) {
      errors[r] = ex.what();
    }
  });
  std::vector<Vec> samples(E);
  for (std::size_t r = 0; r < R; ++r) {
    if (!errors[r].empty()) {
      warn("clt-rate: replica seed " + std::to_string(cfg.seed(r)) + " failed: " + errors[r]);
      t.add(std::numeric_limits<double>::quiet_NaN(), cfg.seed(r), "failure", 1.0);
      continue;
    }
    t.add(0.0, cfg.seed(r), "box_half_width", box[r]);
    for (std::size_t e = 0; e < E; ++e) {
      t.add(cfg.epsilons[e], cfg.seed(r), "sup_hminus_sq", cell[r][e]);
      samples[e].push_back(cell[r][e]);
    }
  }
  Vec means;
  for (std::size_t e = 0; e < E; ++e) {
    t.add_cell("sup_hminus_sq", cfg.epsilons[e], samples[e]);
    means.push_back(samples[e].empty() ? 0.0 : stats::mean(samples[e]));
  }
  t.add_fit("sup_hminus_sq", fit_grid(cfg, cfg.epsilons, samples));
  // Trend: distance grows with eps; ordered by decreasing eps it should decrease.
  Vec ordered = means;
  if (cfg.epsilons.size() > 1 && cfg.epsilons.front() < cfg.epsilons.back()) std::reverse(ordered.begin(), ordered.end());
  const auto inv = count_inversions(ordered);
  t.add_check("monotone_trend", inv <= 1, static_cast<double>(inv));
  return t;
}

// ---------------------------------------------------------------------------
// SGD against the stochastic mean-field equation
// ---------------------------------------------------------------------------

struct SgdCompareGate {
  Vec scaled;      ///< sqrt(M) g(M) per size
  Vec diff_q05;    ///< 5% bootstrap quantile of s(M_{k+1}) - s(M_k)
  bool pass = true;
};

namespace detail {

/// g = sup over times of |mean_r a[r][t] - mean_r b[r][t]| on replica subset idx.
inline double sup_mean_gap(const std::vector<Vec>& a, const std::vector<Vec>& b, const std::vector<std::size_t>& idx) {
  const std::size_t T = a.front().size();
  double g = 0.0;
  for (std::size_t k = 0; k < T; ++k) {
    double sa = 0.0, sb = 0.0;
    for (auto r : idx) {
      sa += a[r][k];
      sb += b[r][k];
    }
    g = std::max(g, std::abs(sa - sb) / static_cast<double>(idx.size()));
  }
  return g;
}

}  // namespace detail

/// For each M: SGD with alpha = 1/M, batch 1, time t = n alpha, against the
/// stochastic mean-field equation with eps = 1/M started from the same atoms.
/// Records g(M) = sup_t |E<phi, mu_t> - E<phi, nu_t>| over the bounded panel,
/// the sup over t of the 1-D W2 distance between the replica samples, and a
/// bootstrap gate on sqrt(M) g(M) being non-increasing.
inline ResultTable exp_sgd_compare(const ExperimentConfig& cfg, SgdCompareGate* gate_out = nullptr) {
  cfg.validate(true);
  const auto inst = make_instance(cfg);
  const auto& c = *inst.coeffs;
  ResultTable t;
  t.experiment = "sgd-compare";
  t.config_hash = config_hash(cfg);
  const auto panel = panel::bounded(c.dim());
  const std::size_t F = panel.size(), R = cfg.replicas, G = cfg.sizes.size();
  const std::size_t gate_f = static_cast<std::size_t>(&find_test_function(panel, cfg.test_function) - panel.data());
  const double ci = cfg.compare_interval;
  const auto nt = static_cast<std::size_t>(std::llround(cfg.horizon / ci));
  if (std::abs(static_cast<double>(nt) * ci - cfg.horizon) > 1e-9) throw Error("sgd-compare: interval must divide T");
  const auto stride = static_cast<std::size_t>(std::llround(ci / cfg.dt));
  if (std::abs(static_cast<double>(stride) * cfg.dt - ci) > 1e-9) throw Error("sgd-compare: dt must divide interval");

  SgdCompareGate gate;
  std::vector<std::vector<std::vector<Vec>>> smfe_v(G), sgd_v(G);  // [g][f][r][time]
  for (std::size_t g = 0; g < G; ++g) {
    const std::size_t M = cfg.sizes[g];
    const double alpha = 1.0 / static_cast<double>(M);
    smfe_v[g].assign(F, std::vector<Vec>(R, Vec(nt + 1)));
    sgd_v[g].assign(F, std::vector<Vec>(R, Vec(nt + 1)));
    std::vector<std::string> errors(R);
    parallel_for(R, cfg.threads, [&](std::size_t r) {
      const auto seed = cfg.seed(r);
      try {
        const auto mu0 = sample_initial(inst.initial, M, derive_seed(seed, stream::initial));
        const double eps = cfg.sgd_full_batch ? 0.0 : alpha;
        const auto noise = NoisePath::generate(derive_seed(seed, stream::noise), cfg.dt, cfg.steps(), c.channels());
        const auto tr = simulate(mu0, c, cfg.integrator(eps, stride), noise);
        SgdConfig sc;
        sc.alpha = alpha;
        sc.batch = 1;
        sc.steps = static_cast<std::size_t>(std::floor(static_cast<double>(M) * cfg.horizon + 1e-9));
        sc.seed = derive_seed(seed, stream::sgd);
        sc.full_batch = cfg.sgd_full_batch;
        const auto chain = run_sgd(c, mu0, sc);
        for (std::size_t k = 0; k <= nt; ++k) {
          const double time = static_cast<double>(k) * ci;
          const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(M) * time + 1e-9));
          const auto& a = tr.snapshots[k];
          const auto& b = chain.snapshots[std::min(n, chain.snapshots.size() - 1)];
          for (std::size_t f = 0; f < F; ++f) {
            double sa = 0.0, sb = 0.0;
            for (std::size_t i = 0; i < M; ++i) {
              sa += a.weights[i] * panel[f](a.atoms[i]);
              sb += b.weights[i] * panel[f](b.atoms[i]);
            }
            smfe_v[g][f][r][k] = sa;
            sgd_v[g][f][r][k] = sb;
          }
        }
      } catch (const Error& ex) {
        errors[r] = ex.what();
      }
    });
    for (std::size_t r = 0; r < R; ++r)
      if (!errors[r].empty()) throw Error("sgd-compare: replica seed " + std::to_string(cfg.seed(r)) + ": " + errors[r]);

    std::vector<std::size_t> all(R);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t f = 0; f < F; ++f) {
      const double gap = detail::sup_mean_gap(smfe_v[g][f], sgd_v[g][f], all);
      double wsup = 0.0;
      for (std::size_t k = 0; k <= nt; ++k) {
        PointSet a(R, 1), b(R, 1);
        for (std::size_t r = 0; r < R; ++r) {
          a[r][0] = smfe_v[g][f][r][k];
          b[r][0] = sgd_v[g][f][r][k];
        }
        wsup = std::max(wsup, w2_distance(EmpiricalMeasure::uniform(a), EmpiricalMeasure::uniform(b)));
      }
      auto& s1 = t.add_cell("gap:" + panel[f].name, static_cast<double>(M), {});
      s1.mean = gap;
      s1.count = R;
      auto& s2 = t.add_cell("scaled_gap:" + panel[f].name, static_cast<double>(M), {});
      s2.mean = std::sqrt(static_cast<double>(M)) * gap;
      s2.count = R;
      auto& s3 = t.add_cell("w2_replicas:" + panel[f].name, static_cast<double>(M), {});
      s3.mean = wsup;
      s3.count = R;
      for (std::size_t r = 0; r < R; ++r) {
        double d = 0.0;
        for (std::size_t k = 0; k <= nt; ++k) d = std::max(d, std::abs(smfe_v[g][f][r][k] - sgd_v[g][f][r][k]));
        t.add(static_cast<double>(M), cfg.seed(r), "sup_abs_diff:" + panel[f].name, d);
      }
      if (f == gate_f) gate.scaled.push_back(std::sqrt(static_cast<double>(M)) * gap);
    }
  }

  // Bootstrap gate: replicas are independent across M, so each size is resampled on its own.
  std::mt19937_64 gen(derive_seed(cfg.base_seed, 99));
  std::vector<Vec> boot(G, Vec(cfg.bootstrap));
  for (std::size_t b = 0; b < cfg.bootstrap; ++b)
    for (std::size_t g = 0; g < G; ++g) {
      const auto idx = stats::resample(R, gen);
      boot[g][b] = std::sqrt(static_cast<double>(cfg.sizes[g])) *
                   detail::sup_mean_gap(smfe_v[g][gate_f], sgd_v[g][gate_f], idx);
    }
  for (std::size_t g = 0; g + 1 < G; ++g) {
    Vec diff(cfg.bootstrap);
    for (std::size_t b = 0; b < cfg.bootstrap; ++b) diff[b] = boot[g + 1][b] - boot[g][b];
    const double q = stats::quantile(diff, 0.05);
    gate.diff_q05.push_back(q);
    gate.pass = gate.pass && q <= 0.0;
    t.add_check("non_increasing:" + std::to_string(cfg.sizes[g]) + "->" + std::to_string(cfg.sizes[g + 1]), q <= 0.0,
                q);
  }
  t.add_check("scaled_gap_non_increasing", gate.pass, gate.scaled.empty() ? 0.0 : gate.scaled.back());
  if (gate_out) *gate_out = gate;
  return t;
}

// ---------------------------------------------------------------------------
// Commuting limits
// ---------------------------------------------------------------------------

struct CommuteReport {
  std::vector<Vec> mean;  ///< [size][rate] mean W2^2 to the transport endpoint
  std::vector<Vec> se;
  double c_alpha = 0.0, c_size = 0.0;  ///< fit D ~ c_alpha alpha + c_size / M
  double relative_residual = 0.0;
  double endpoint_alpha_first = 0.0;  ///< alpha -> 0 then M -> infinity
  double endpoint_size_first = 0.0;   ///< M -> infinity then alpha -> 0
  double endpoint_tolerance = 0.0;
  bool corner_smallest = false;
};

namespace detail {

/// Intercept and its standard error for weighted-free OLS y = a + b x.
inline std::pair<double, double> intercept_with_se(std::span<const double> x, std::span<const double> y,
                                                   std::span<const double> se) {
  const auto f = stats::ols(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = stats::mean(x);
  double sxx = 0.0;
  for (double v : x) sxx += (v - mx) * (v - mx);
  // Propagate the per-point standard errors through the linear map y -> intercept.
  double var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double coef = 1.0 / n - mx * (x[i] - mx) / sxx;
    var += coef * coef * se[i] * se[i];
  }
  return {f.intercept, std::sqrt(var)};
}

}  // namespace detail

/// W2^2 at time T between SGD with M particles and learning rate alpha
/// (t = n alpha) and the transport endpoint of a large reference ensemble,
/// on the (M, alpha) grid. Fits D ~ c1 alpha + c2 / M and compares the two
/// iterated-limit endpoints.
inline ResultTable exp_commute(const ExperimentConfig& cfg, CommuteReport* report_out = nullptr) {
  cfg.validate(true);
  const auto inst = make_instance(cfg);
  const auto& c = *inst.coeffs;
  ResultTable t;
  t.experiment = "commute";
  t.config_hash = config_hash(cfg);
  const std::size_t G = cfg.sizes.size(), A = cfg.learning_rates.size(), R = cfg.replicas, NR = cfg.reference_size();
  for (double a : cfg.learning_rates) {
    const double n = cfg.horizon / a;
    if (std::abs(n - std::round(n)) > 1e-9) throw Error("commute: T / alpha must be an integer");
  }
  std::vector<std::vector<Vec>> D(R, std::vector<Vec>(G, Vec(A)));
  std::vector<std::string> errors(R);
  parallel_for(R, cfg.threads, [&](std::size_t r) {
    const auto seed = cfg.seed(r);
    try {
      const auto ref0 = sample_initial(inst.initial, NR, derive_seed(seed, stream::reference));
      const auto ref = simulate_transport(ref0, c, cfg.integrator(0.0, cfg.steps()));
      for (std::size_t g = 0; g < G; ++g) {
        const auto mu0 = sample_initial(inst.initial, cfg.sizes[g], derive_seed(seed, stream::initial));
        for (std::size_t a = 0; a < A; ++a) {
          SgdConfig sc;
          sc.alpha = cfg.learning_rates[a];
          sc.batch = 1;
          sc.steps = static_cast<std::size_t>(std::llround(cfg.horizon / sc.alpha));
          sc.seed = derive_seed(derive_seed(seed, stream::sgd), g * A + a);
          sc.snapshot_stride = sc.steps;
          sc.full_batch = cfg.sgd_full_batch;
          const auto chain = run_sgd(c, mu0, sc);
          const double w = w2_distance(chain.snapshots.back(), ref.final());
          D[r][g][a] = w * w;
        }
      }
    } catch (const Error& ex) {
      errors[r] = ex.what();
    }
  });
  CommuteReport rep;
  rep.mean.assign(G, Vec(A));
  rep.se.assign(G, Vec(A));
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t a = 0; a < A; ++a) {
      Vec v;
      for (std::size_t r = 0; r < R; ++r) {
        if (!errors[r].empty()) continue;
        v.push_back(D[r][g][a]);
        t.add(cfg.learning_rates[a], cfg.seed(r), "w2_sq_M" + std::to_string(cfg.sizes[g]), D[r][g][a]);
      }
      if (v.empty()) throw Error("commute: every replica failed");
      auto& s = t.add_cell("w2_sq_M" + std::to_string(cfg.sizes[g]), cfg.learning_rates[a], v);
      rep.mean[g][a] = s.mean;
      rep.se[g][a] = s.stderr_;
    }
  for (std::size_t r = 0; r < R; ++r)
    if (!errors[r].empty()) {
      warn("commute: replica seed " + std::to_string(cfg.seed(r)) + " failed: " + errors[r]);
      t.add(std::numeric_limits<double>::quiet_NaN(), cfg.seed(r), "failure", 1.0);
    }

  // Least squares D = c1 alpha + c2 / M.
  double s11 = 0, s12 = 0, s22 = 0, b1 = 0, b2 = 0, ss = 0;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t a = 0; a < A; ++a) {
      const double x1 = cfg.learning_rates[a], x2 = 1.0 / static_cast<double>(cfg.sizes[g]), y = rep.mean[g][a];
      s11 += x1 * x1;
      s12 += x1 * x2;
      s22 += x2 * x2;
      b1 += x1 * y;
      b2 += x2 * y;
      ss += y * y;
    }
  const double det = s11 * s22 - s12 * s12;
  rep.c_alpha = (b1 * s22 - b2 * s12) / det;
  rep.c_size = (s11 * b2 - s12 * b1) / det;
  double res = 0.0;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t a = 0; a < A; ++a) {
      const double fit = rep.c_alpha * cfg.learning_rates[a] + rep.c_size / static_cast<double>(cfg.sizes[g]);
      res += (rep.mean[g][a] - fit) * (rep.mean[g][a] - fit);
    }
  rep.relative_residual = ss > 0.0 ? std::sqrt(res / ss) : 0.0;

  // Iterated limits: smallest alpha column extrapolated in 1/M, and largest M row extrapolated in alpha.
  const std::size_t a_min = static_cast<std::size_t>(
      std::min_element(cfg.learning_rates.begin(), cfg.learning_rates.end()) - cfg.learning_rates.begin());
  const std::size_t g_max =
      static_cast<std::size_t>(std::max_element(cfg.sizes.begin(), cfg.sizes.end()) - cfg.sizes.begin());
  Vec inv_m, col, col_se, row, row_se;
  for (std::size_t g = 0; g < G; ++g) {
    inv_m.push_back(1.0 / static_cast<double>(cfg.sizes[g]));
    col.push_back(rep.mean[g][a_min]);
    col_se.push_back(rep.se[g][a_min]);
  }
  for (std::size_t a = 0; a < A; ++a) {
    row.push_back(rep.mean[g_max][a]);
    row_se.push_back(rep.se[g_max][a]);
  }
  const auto [e1, e1_se] = detail::intercept_with_se(inv_m, col, col_se);
  const auto [e2, e2_se] = detail::intercept_with_se(cfg.learning_rates, row, row_se);
  rep.endpoint_alpha_first = e1;
  rep.endpoint_size_first = e2;
  rep.endpoint_tolerance = 2.0 * std::sqrt(e1_se * e1_se + e2_se * e2_se) +
                           std::abs(rep.c_alpha) * cfg.learning_rates[a_min] +
                           std::abs(rep.c_size) / static_cast<double>(cfg.sizes[g_max]);

  double best = std::numeric_limits<double>::infinity();
  std::size_t bg = 0, ba = 0;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t a = 0; a < A; ++a)
      if (rep.mean[g][a] < best) {
        best = rep.mean[g][a];
        bg = g;
        ba = a;
      }
  rep.corner_smallest = bg == g_max && ba == a_min;

  auto& fit = t.add_check("fit_relative_residual", rep.relative_residual < 0.3, rep.relative_residual);
  fit.slope = rep.c_alpha;
  fit.slope_low = rep.c_size;
  t.add_check("endpoints_agree", std::abs(e1 - e2) <= rep.endpoint_tolerance, std::abs(e1 - e2),
              "alpha-first " + detail::fmt_num(e1) + " size-first " + detail::fmt_num(e2));
  t.add_check("corner_smallest", rep.corner_smallest, best);
  if (report_out) *report_out = rep;
  return t;
}

}  // namespace smfe
