#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "smfe/config.hpp"
#include "smfe/diagnostics.hpp"
#include "smfe/stats.hpp"

using namespace smfe;

namespace {

NetworkCoefficients reference_network() { return NetworkCoefficients(reference_dataset(), Activation::from_name("tanh")); }

ParticleEnsemble reference_initial(std::size_t n, std::uint64_t seed) {
  return sample_initial(UniformBox{{-1.0, -1.0}, {1.0, 1.0}}, n, seed);
}

IntegratorConfig config(double dt, double horizon, double eps, std::size_t stride = 1) {
  IntegratorConfig c;
  c.dt = dt;
  c.horizon = horizon;
  c.epsilon = eps;
  c.snapshot_stride = stride;
  return c;
}

TestFunction named(const std::string& name, std::size_t dim) {
  for (auto& f : panel::standard(dim))
    if (f.name == name) return f;
  throw Error("no test function " + name);
}

/// Sum over all ordered n-tuples, repeated indices included.
double ordered_tuple_sum(const EmpiricalMeasure& mu, int n) {
  const std::size_t N = mu.size();
  std::vector<std::size_t> idx(static_cast<std::size_t>(n), 0);
  double s = 0.0;
  while (true) {
    double term = 1.0;
    for (int a = 0; a < n; ++a) {
      term *= mu.weights[idx[a]];
      for (int b = a + 1; b < n; ++b) term *= squared_distance(mu.atoms[idx[a]], mu.atoms[idx[b]]);
    }
    s += term;
    int k = 0;
    while (k < n && idx[k] == N - 1) idx[k++] = 0;
    if (k == n) break;
    ++idx[k];
  }
  return s;
}

}  // namespace

// --- weak residual ---------------------------------------------------------------

TEST(WeakResidual, ConstantTestFunctionIsExact) {
  const auto c = reference_network();
  const auto noise = NoisePath::generate(1, 1e-2, 100, c.channels());
  const auto tr = simulate(reference_initial(30, 1), c, config(1e-2, 1.0, 0.1), noise);
  EXPECT_EQ(smfe_weak_residual(tr, &noise, c, panel::constant(2)), 0.0);
}

TEST(WeakResidual, LinearFunctionUnderConstantDrift) {
  const auto c = constant_drift_coefficients(Vec{0.25, -0.5});
  const auto tr = simulate_transport(reference_initial(30, 2), c, config(1e-2, 1.0, 0.0));
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(smfe_weak_residual(tr, nullptr, c, panel::coordinate(2, k)), 0.0, 1e-13);
}

TEST(WeakResidual, RequiresMatchingNoiseAndFullStorage) {
  const auto c = reference_network();
  const auto noise = NoisePath::generate(3, 1e-2, 100, c.channels());
  const auto tr = simulate(reference_initial(10, 3), c, config(1e-2, 1.0, 0.1), noise);
  const auto other = NoisePath::generate(4, 1e-2, 100, c.channels());
  EXPECT_THROW(smfe_weak_residual(tr, &other, c, panel::standard(2)), Error);
  EXPECT_THROW(smfe_weak_residual(tr, nullptr, c, panel::standard(2)), Error);
  const auto sparse = simulate(reference_initial(10, 3), c, config(1e-2, 1.0, 0.1, 10), noise);
  EXPECT_THROW(smfe_weak_residual(sparse, &noise, c, panel::standard(2)), Error);
}

TEST(WeakResidual, FirstOrderInTimeStep) {
  const auto c = reference_network();
  const auto panel = panel::bounded(2);
  const double base_dt = 1.0 / 400.0;
  const std::vector<std::size_t> factors{8, 4, 2, 1};
  Vec mean_abs(factors.size(), 0.0), dts;
  for (auto f : factors) dts.push_back(base_dt * static_cast<double>(f));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto init = reference_initial(30, 100 + seed);
    const auto fine = NoisePath::generate(200 + seed, base_dt, 400, c.channels());
    for (std::size_t j = 0; j < factors.size(); ++j) {
      const auto noise = factors[j] == 1 ? fine : fine.coarsened(factors[j]);
      const auto tr = simulate(init, c, config(dts[j], 1.0, 1e-3), noise);
      for (double r : smfe_weak_residual(tr, &noise, c, panel)) mean_abs[j] += std::abs(r) / 20.0;
    }
  }
  for (std::size_t j = 1; j < factors.size(); ++j) {
    const double ratio = mean_abs[j] / mean_abs[j - 1];
    EXPECT_GT(ratio, 0.325) << j;
    EXPECT_LT(ratio, 0.675) << j;
  }
  const auto fit = stats::fit_slope(dts, mean_abs);
  EXPECT_GE(fit.slope, 0.7);
  EXPECT_LE(fit.slope, 1.3);
}

// --- quadratic variation ---------------------------------------------------------

TEST(QuadraticVariation, VanishesWithoutNoise) {
  const auto c = reference_network();
  const auto tr = simulate_transport(reference_initial(30, 5), c, config(1e-2, 1.0, 0.0));
  const auto q = qv_check(tr, c, named("bump0", 2));
  EXPECT_EQ(q.predicted, 0.0);
  EXPECT_LT(q.realized, 100.0 * 1e-4 * 1e-4);
}

TEST(QuadraticVariation, SingleDataAtomHasNoPredictedVariation) {
  const Dataset data(PointSet(1, Vec{0.5}), Vec{1.0}, Vec{0.5});
  NetworkCoefficients c(data, Activation::from_name("tanh"));
  const auto noise = NoisePath::generate(6, 1e-2, 100, 1);
  const auto tr = simulate(reference_initial(30, 6), c, config(1e-2, 1.0, 0.1), noise);
  const auto q = qv_check(tr, c, named("bump0", 2));
  EXPECT_EQ(q.predicted, 0.0);
  EXPECT_LT(q.realized, 100.0 * 1e-4 * 1e-4);
}

TEST(QuadraticVariation, RealizedMatchesPredictedOnAverage) {
  const auto c = reference_network();
  const auto phi = named("bump0", 2);
  double ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto noise = NoisePath::generate(300 + seed, 1e-2, 100, c.channels());
    const auto tr = simulate(reference_initial(40, 400 + seed), c, config(1e-2, 1.0, 0.05), noise);
    const auto q = qv_check(tr, c, phi);
    ASSERT_GT(q.predicted, 0.0);
    ratio += q.realized / q.predicted / 50.0;
  }
  EXPECT_LT(std::abs(ratio - 1.0), 0.2);
}

TEST(QuadraticVariation, DeterministicPerPathAndWindowed) {
  const auto c = reference_network();
  const auto noise = NoisePath::generate(7, 1e-2, 100, c.channels());
  const auto tr = simulate(reference_initial(20, 7), c, config(1e-2, 1.0, 0.05), noise);
  const auto phi = named("wave1", 2);
  const auto a = qv_check(tr, c, phi), b = qv_check(tr, c, phi);
  EXPECT_EQ(a.predicted, b.predicted);
  EXPECT_EQ(a.realized, b.realized);
  const auto first = qv_check(tr, c, phi, 0, 50), second = qv_check(tr, c, phi, 50, 100);
  EXPECT_NEAR(first.predicted + second.predicted, a.predicted, 1e-15);
  EXPECT_THROW(qv_check(tr, c, phi, 60, 50), Error);
}

// --- F_n ----------------------------------------------------------------------------

TEST(FnFunctional, TwoPointExample) {
  const auto mu = EmpiricalMeasure::uniform(PointSet(1, Vec{0.0, 1.0}));
  EXPECT_DOUBLE_EQ(f_n_functional(mu, 2), 0.5);
}

TEST(FnFunctional, VanishesOnFewDistinctAtoms) {
  const EmpiricalMeasure two(PointSet(2, Vec{0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 1.0, 2.0}), Vec{0.1, 0.2, 0.3, 0.4});
  EXPECT_EQ(f_n_functional(two, 3), 0.0);
  EXPECT_EQ(f_n_functional(two, 4), 0.0);
  EXPECT_GT(f_n_functional(two, 2), 0.0);
  const auto three = EmpiricalMeasure::uniform(PointSet(1, Vec{0.0, 1.0, 3.0, 1.0, 0.0}));
  EXPECT_EQ(f_n_functional(three, 4), 0.0);
  EXPECT_GT(f_n_functional(three, 3), 0.0);
}

TEST(FnFunctional, MatchesOrderedTupleEnumeration) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int n = 2; n <= 4; ++n) {
    PointSet pts(7, 2);
    for (double& v : pts.raw()) v = u(gen);
    Vec w(7);
    double s = 0.0;
    for (double& x : w) s += (x = 0.5 + u(gen) * 0.4);
    for (double& x : w) x /= s;
    w[0] += 1.0 - std::accumulate(w.begin(), w.end(), 0.0);
    const EmpiricalMeasure mu(pts, w);
    const double v = f_n_functional(mu, n);
    EXPECT_GE(v, 0.0);
    EXPECT_NEAR(v, ordered_tuple_sum(mu, n), 1e-12 * std::max(1.0, v)) << n;
  }
}

TEST(FnFunctional, PermutationInvariant) {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  PointSet pts(30, 3);
  for (double& v : pts.raw()) v = u(gen);
  const auto mu = EmpiricalMeasure::uniform(pts);
  std::vector<std::size_t> order(30);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), gen);
  PointSet shuffled(3, Vec{});
  for (auto i : order) shuffled.push_back(pts[i]);
  const auto nu = EmpiricalMeasure::uniform(shuffled);
  for (int n = 2; n <= 4; ++n) {
    const double a = f_n_functional(mu, n), b = f_n_functional(nu, n);
    EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, a)) << n;
  }
}

TEST(FnFunctional, EnforcesBudget) {
  PointSet pts(201, 1);
  for (std::size_t i = 0; i < 201; ++i) pts[i][0] = static_cast<double>(i);
  const auto mu = EmpiricalMeasure::uniform(pts);
  EXPECT_THROW(f_n_functional(mu, 4), Error);
  EXPECT_NO_THROW(f_n_functional(mu, 3));
  EXPECT_THROW(f_n_functional(mu, 5), Error);
  EXPECT_THROW(f_n_functional(mu, 1), Error);
}

// --- collisions and moments ------------------------------------------------------

TEST(Pairwise, FrozenDynamicsKeepRatioOne) {
  const auto c = frozen_coefficients(2, {0.5, 0.5});
  const auto noise = NoisePath::generate(10, 1e-2, 100, 2);
  const auto r = min_pairwise_distance(simulate(reference_initial(20, 10), c, config(1e-2, 1.0, 1.0), noise));
  EXPECT_EQ(r.ratio, 1.0);
  EXPECT_FALSE(r.collision);
}

TEST(Pairwise, RigidTranslationKeepsRatioOne) {
  const auto c = constant_drift_coefficients(Vec{0.3, 0.1});
  const auto r = min_pairwise_distance(simulate_transport(reference_initial(20, 11), c, config(1e-2, 1.0, 0.0)));
  EXPECT_NEAR(r.ratio, 1.0, 1e-12);
}

TEST(Pairwise, IgnoresInitiallyCoincidentPairsAndNeedsTwoDistinct) {
  const auto c = constant_drift_coefficients(Vec{0.3, 0.1});
  const auto init = sample_initial(AtomList{PointSet(2, Vec{0.0, 0.0, 0.0, 0.0, 1.0, 0.0})}, 3, 0);
  const auto r = min_pairwise_distance(simulate_transport(init, c, config(0.1, 1.0, 0.0)));
  EXPECT_NEAR(r.initial, 1.0, 1e-15);
  const auto same = sample_initial(AtomList{PointSet(2, Vec{0.5, 0.5, 0.5, 0.5})}, 2, 0);
  EXPECT_THROW(min_pairwise_distance(simulate_transport(same, c, config(0.1, 1.0, 0.0))), Error);
}

TEST(Pairwise, ReferenceInstanceStaysSeparated) {
  const auto c = reference_network();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto noise = NoisePath::generate(500 + seed, 1e-2, 100, c.channels());
    const auto r = min_pairwise_distance(simulate(reference_initial(60, 600 + seed), c, config(1e-2, 1.0, 1e-2), noise));
    EXPECT_GT(r.ratio, 1e-6) << seed;
    EXPECT_EQ(r.curve.size(), 101u);
  }
}

TEST(Moments, FrozenDynamicsKeepInitialMoment) {
  const auto c = frozen_coefficients(2, {0.5, 0.5});
  const auto tr = simulate_transport(reference_initial(20, 12), c, config(1e-2, 1.0, 0.0));
  for (int p : {2, 4}) {
    const auto r = moment_track(tr, p);
    EXPECT_EQ(r.sup, r.initial);
    EXPECT_DOUBLE_EQ(r.ratio, r.initial / (1.0 + r.initial));
  }
}

TEST(Moments, RigidTranslationBound) {
  const Vec v{0.3, -0.4};
  const auto init = reference_initial(20, 13);
  const auto tr = simulate_transport(init, constant_drift_coefficients(v), config(1e-2, 1.0, 0.0));
  double rmax = 0.0;
  for (std::size_t i = 0; i < init.size(); ++i) rmax = std::max(rmax, norm(init.atoms[i]));
  EXPECT_LE(moment_track(tr, 2).sup, std::pow(rmax + norm(v), 2));
}

TEST(Moments, RatioStableAcrossEnsembleSizes) {
  const auto c = reference_network();
  Vec ratios;
  for (std::size_t n : {50u, 100u, 200u}) {
    double mean_ratio = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto noise = NoisePath::generate(700 + seed, 1e-2, 100, c.channels());
      const auto tr = simulate(reference_initial(n, 800 + seed), c, config(1e-2, 1.0, 1e-2, 10), noise);
      mean_ratio += moment_track(tr, 2).ratio / 10.0;
    }
    ratios.push_back(mean_ratio);
  }
  const double mid = stats::mean(ratios);
  for (double r : ratios) EXPECT_LT(std::abs(r / mid - 1.0), 0.25);
}

TEST(Conservation, WeightsAndMass) {
  const auto c = reference_network();
  const auto noise = NoisePath::generate(14, 1e-2, 100, c.channels());
  const auto tr = simulate(reference_initial(25, 14), c, config(1e-2, 1.0, 0.1, 10), noise);
  EXPECT_TRUE(weights_conserved(tr));
  EXPECT_LT(mass_defect(tr), 1e-14);
}

TEST(Report, WritesFixedHeader) {
  std::ostringstream out;
  write_report(out, {{"bump0", 3, "weak_residual", 0.25}});
  EXPECT_EQ(out.str(), "subject,seed,metric,value\nbump0,3,weak_residual,0.25\n");
}
