#include <gtest/gtest.h>

#include "smfe/config.hpp"
#include "smfe/fluctuations.hpp"
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

/// The interacting 1-D drift with the noise switched off.
SyntheticCoefficients interacting_without_noise() {
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
  return SyntheticCoefficients(std::move(s));
}

/// V = 0 with position-dependent noise on three channels in d = 2.
SyntheticCoefficients pure_noise_2d() {
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

double field_pair(const TangentEnsemble& t, const TestFunction& phi) { return pair(t.field(), phi); }

}  // namespace

// --- tangent system -------------------------------------------------------------

TEST(Tangent, NoNoiseKeepsTangentsAtZero) {
  const auto c = interacting_without_noise();
  const auto init = sample_initial(UniformBox{{-1.0}, {1.0}}, 30, 1);
  const auto path = simulate_tangent(init, c, config(1e-2, 1.0, 0.0), NoisePath::generate(1, 1e-2, 100, 2));
  for (const auto& t : path.snapshots)
    for (double v : t.tangents.raw()) EXPECT_EQ(v, 0.0);
}

TEST(Tangent, SingleDataAtomHasNoForcing) {
  const Dataset data(PointSet(1, Vec{0.5}), Vec{1.0}, Vec{0.5});
  NetworkCoefficients c(data, Activation::from_name("tanh"));
  const auto path = simulate_tangent(reference_initial(20, 2), c, config(1e-2, 1.0, 0.0),
                                     NoisePath::generate(2, 1e-2, 100, 1));
  for (double v : path.final().tangents.raw()) EXPECT_EQ(v, 0.0);
}

TEST(Tangent, ZeroDriftAccumulatesForcingByHand) {
  const auto c = pure_noise_2d();
  const auto init = reference_initial(10, 3);
  const auto noise = NoisePath::generate(3, 1e-2, 50, 3);
  const auto path = simulate_tangent(init, c, config(1e-2, 0.5, 0.0), noise);
  const auto w = c.channel_weights();
  for (std::size_t i = 0; i < init.size(); ++i) {
    EXPECT_EQ(path.final().base[i][0], init.atoms[i][0]);
    EXPECT_EQ(path.final().base[i][1], init.atoms[i][1]);
    const auto g = c.noise_matrix(init.atoms[i], init);
    for (std::size_t k = 0; k < 2; ++k) {
      double y = 0.0;
      for (std::size_t s = 0; s < 50; ++s)
        for (std::size_t p = 0; p < 3; ++p) y += g(p, k) * std::sqrt(w[p]) * noise.step(s)[p];
      EXPECT_NEAR(path.final().tangents[i][k], y, 1e-13);
    }
  }
}

TEST(Tangent, BaseFollowsTransport) {
  const auto c = reference_network();
  const auto init = reference_initial(20, 4);
  const auto cfg = config(1e-2, 1.0, 0.0, 10);
  const auto path = simulate_tangent(init, c, cfg, NoisePath::generate(4, 1e-2, 100, c.channels()));
  const auto tr = simulate_transport(init, c, cfg);
  ASSERT_EQ(path.steps, tr.steps);
  for (std::size_t s = 0; s < tr.size(); ++s) EXPECT_EQ(path.snapshots[s].base.raw(), tr.snapshots[s].atoms.raw());
}

TEST(Tangent, LinearInInitialDataAndForcing) {
  const auto c = reference_network();
  const auto init = reference_initial(20, 5);
  const auto noise = NoisePath::generate(5, 1e-2, 100, c.channels());
  const auto cfg = config(1e-2, 1.0, 0.0);
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  auto t0 = TangentEnsemble::at_rest(init);
  for (double& v : t0.tangents.raw()) v = nd(gen);
  const auto base = simulate_tangent(t0, c, cfg, noise, 1.0);
  for (double a : {2.0, 0.5, -4.0}) {
    auto ta = t0;
    for (double& v : ta.tangents.raw()) v *= a;
    const auto scaled = simulate_tangent(ta, c, cfg, noise, a);
    auto expected = base.final().tangents.raw();
    for (double& v : expected) v *= a;
    EXPECT_EQ(scaled.final().tangents.raw(), expected) << a;
  }
}

TEST(Tangent, StepRejectsWrongIncrementCount) {
  const auto c = reference_network();
  const auto t = TangentEnsemble::at_rest(reference_initial(5, 6));
  EXPECT_THROW(tangent_step(t, c, config(1e-2, 1.0, 0.0), Vec(2, 0.0)), DimensionError);
  EXPECT_NO_THROW(tangent_step(t, c, config(1e-2, 1.0, 0.0), Vec(5, 0.0)));
}

TEST(Tangent, IsDerivativeOfNoisyFlow) {
  // One step: (X^eps - X^0) / sqrt(eps) equals Y exactly for a zero-tangent start.
  const auto c = reference_network();
  const auto init = reference_initial(15, 7);
  const auto noise = NoisePath::generate(7, 1e-2, 1, c.channels());
  const double eps = 1e-6;
  const auto noisy = step_interacting(init, c, config(1e-2, 1e-2, eps), noise.step(0));
  const auto t = tangent_step(TangentEnsemble::at_rest(init), c, config(1e-2, 1e-2, 0.0), noise.step(0));
  for (std::size_t i = 0; i < init.size(); ++i)
    for (std::size_t k = 0; k < 2; ++k)
      EXPECT_NEAR((noisy.atoms[i][k] - t.base[i][k]) / std::sqrt(eps), t.tangents[i][k], 1e-8);
}

// --- fluctuation field ------------------------------------------------------------

TEST(EtaEps, VanishesWithoutNoise) {
  const auto c = interacting_without_noise();
  const auto init = sample_initial(UniformBox{{-1.0}, {1.0}}, 20, 8);
  const auto cfg = config(1e-2, 1.0, 0.1, 20);
  const auto noisy = simulate(init, c, cfg, NoisePath::generate(8, 1e-2, 100, 2));
  const auto base = simulate_transport(init, c, cfg);
  for (const auto& eta : eta_eps(noisy, base, 0.1)) {
    EXPECT_EQ(sobolev_neg_norm(eta, SpectralGrid{3.0, 32, 5}).norm, 0.0);
    for (const auto& phi : panel::standard(1)) EXPECT_NEAR(pair(eta, phi), 0.0, 1e-12);
  }
}

TEST(EtaEps, MassPairingIsZero) {
  const auto c = reference_network();
  const auto init = reference_initial(30, 9);
  const auto cfg = config(1e-2, 1.0, 0.05, 25);
  const auto noise = NoisePath::generate(9, 1e-2, 100, c.channels());
  const auto noisy = simulate(init, c, cfg, noise);
  const auto base = simulate_transport(init, c, cfg);
  const auto tan = simulate_tangent(init, c, cfg, noise);
  for (const auto& eta : eta_eps(noisy, base, 0.05)) EXPECT_NEAR(pair(eta, panel::constant(2)), 0.0, 1e-12);
  for (const auto& t : tan.snapshots) EXPECT_EQ(field_pair(t, panel::constant(2)), 0.0);
}

TEST(EtaEps, RejectsMismatchedInputs) {
  const auto c = reference_network();
  const auto init = reference_initial(10, 10);
  const auto a = simulate_transport(init, c, config(1e-2, 1.0, 0.0, 10));
  const auto b = simulate_transport(init, c, config(1e-2, 1.0, 0.0, 20));
  EXPECT_THROW(eta_eps(a, b, 0.1), Error);
  EXPECT_THROW(eta_eps(a.final(), b.final(), 0.0), Error);
  EXPECT_THROW(eta_eps(a.final(), reference_initial(11, 1), 0.1), DimensionError);
}

TEST(EtaEps, ConvergesToTangentPairingAsEpsilonShrinks) {
  const auto c = reference_network();
  const auto init = reference_initial(40, 11);
  const auto cfg0 = config(1e-2, 1.0, 0.0, 100);
  const auto noise = NoisePath::generate(11, 1e-2, 100, c.channels());
  const auto base = simulate_transport(init, c, cfg0);
  const auto tan = simulate_tangent(init, c, cfg0, noise);
  for (const auto& phi : panel::standard(2)) {
    if (phi.name == "const") continue;
    const double target = field_pair(tan.final(), phi);
    Vec err;
    for (double eps : {1e-2, 1e-3, 1e-4}) {
      const auto noisy = simulate(init, c, config(1e-2, 1.0, eps, 100), noise);
      err.push_back(std::abs(pair(eta_eps(noisy.final(), base.final(), eps), phi) - target));
    }
    EXPECT_LT(err[1], err[0]) << phi.name;
    EXPECT_LT(err[2], err[1]) << phi.name;
  }
}

// --- CLT distance -----------------------------------------------------------------

TEST(CltDistance, TangentAgainstItselfIsZero) {
  const auto c = reference_network();
  const auto init = reference_initial(20, 12);
  const auto tan = simulate_tangent(init, c, config(1e-2, 1.0, 0.0, 50), NoisePath::generate(12, 1e-2, 100, 5));
  const SpectralGrid grid{3.0, 16, 5};
  for (const auto& t : tan.snapshots) EXPECT_EQ(sobolev_neg_norm(t.field() - t.field(), grid).norm, 0.0);
}

TEST(CltDistance, DoublingTangentsDoublesNorm) {
  const auto c = reference_network();
  const auto tan = simulate_tangent(reference_initial(20, 13), c, config(1e-2, 1.0, 0.0, 100),
                                    NoisePath::generate(13, 1e-2, 100, 5));
  const SpectralGrid grid{3.0, 16, 5};
  auto t = tan.final();
  const double n1 = sobolev_neg_norm(t.field(), grid).norm;
  for (double& v : t.tangents.raw()) v *= 2.0;
  EXPECT_NEAR(sobolev_neg_norm(t.field(), grid).norm, 2.0 * n1, 1e-12);
  EXPECT_GT(n1, 0.0);
}

TEST(CltDistance, ShrinksLinearlyInEpsilonOnOnePath) {
  const auto c = reference_network();
  const auto init = reference_initial(30, 14);
  const auto noise = NoisePath::generate(14, 1e-2, 100, c.channels());
  const auto cfg0 = config(1e-2, 1.0, 0.0, 20);
  const auto tan = simulate_tangent(init, c, cfg0, noise);
  const SpectralGrid grid{3.0, 32, 5};
  Vec eps{1e-2, 1e-3, 1e-4}, sq;
  for (double e : eps) {
    const auto noisy = simulate(init, c, config(1e-2, 1.0, e, 20), noise);
    const auto d = clt_distance(noisy, tan, e, grid);
    EXPECT_EQ(d.curve.size(), tan.size());
    EXPECT_EQ(d.curve.front(), 0.0);
    sq.push_back(d.sup * d.sup);
  }
  const auto fit = stats::fit_slope(eps, sq);
  EXPECT_NEAR(fit.slope, 1.0, 0.15);
}

TEST(CltDistance, RejectsMismatchedGridsAndBoxViolations) {
  const auto c = reference_network();
  const auto init = reference_initial(10, 15);
  const auto noise = NoisePath::generate(15, 1e-2, 100, c.channels());
  const auto tan = simulate_tangent(init, c, config(1e-2, 1.0, 0.0, 10), noise);
  const auto noisy = simulate(init, c, config(1e-2, 1.0, 0.01, 20), noise);
  EXPECT_THROW(clt_distance(noisy, tan, 0.01, SpectralGrid{3.0, 16, 5}), Error);
  const auto noisy10 = simulate(init, c, config(1e-2, 1.0, 0.01, 10), noise);
  EXPECT_THROW(clt_distance(noisy10, tan, 0.01, SpectralGrid{0.5, 16, 5}), Error);
}

// --- weak residual of the linear equation ----------------------------------------

TEST(WeakResidualLinear, ConstantTestFunctionIsExact) {
  const auto c = reference_network();
  const auto noise = NoisePath::generate(16, 1e-2, 50, c.channels());
  const auto tan = simulate_tangent(reference_initial(20, 16), c, config(1e-2, 0.5, 0.0), noise);
  EXPECT_EQ(weak_residual_linear(tan, c, noise, {panel::constant(2)})[0], 0.0);
}

TEST(WeakResidualLinear, FrozenCoefficientsAreExact) {
  const auto c = frozen_coefficients(2, {0.5, 0.5});
  const auto noise = NoisePath::generate(17, 1e-2, 50, 2);
  const auto tan = simulate_tangent(reference_initial(20, 17), c, config(1e-2, 0.5, 0.0), noise);
  for (double r : weak_residual_linear(tan, c, noise, panel::standard(2))) EXPECT_EQ(r, 0.0);
}

TEST(WeakResidualLinear, RequiresMatchingNoiseAndFullStorage) {
  const auto c = reference_network();
  const auto noise = NoisePath::generate(18, 1e-2, 50, c.channels());
  const auto tan = simulate_tangent(reference_initial(10, 18), c, config(1e-2, 0.5, 0.0), noise);
  EXPECT_THROW(weak_residual_linear(tan, c, NoisePath::generate(19, 1e-2, 50, 5), panel::standard(2)), Error);
  const auto sparse = simulate_tangent(reference_initial(10, 18), c, config(1e-2, 0.5, 0.0, 5), noise);
  EXPECT_THROW(weak_residual_linear(sparse, c, noise, panel::standard(2)), Error);
}

TEST(WeakResidualLinear, HalvesWithTimeStep) {
  const auto c = reference_network();
  const auto panel = panel::bounded(2);
  const double base_dt = 0.0025;
  Vec mean_abs(3, 0.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto init = reference_initial(30, 200 + seed);
    const auto fine = NoisePath::generate(300 + seed, base_dt, 400, c.channels());
    for (std::size_t j = 0; j < 3; ++j) {
      const std::size_t factor = std::size_t{1} << (2 - j);
      const auto noise = factor == 1 ? fine : fine.coarsened(factor);
      const auto tan = simulate_tangent(init, c, config(base_dt * factor, 1.0, 0.0), noise);
      for (double r : weak_residual_linear(tan, c, noise, panel)) mean_abs[j] += std::abs(r);
    }
  }
  for (std::size_t j = 1; j < 3; ++j) {
    const double ratio = mean_abs[j] / mean_abs[j - 1];
    EXPECT_GT(ratio, 0.325) << j;
    EXPECT_LT(ratio, 0.675) << j;
  }
}

// --- distributional properties ------------------------------------------------------

TEST(FluctuationLaw, GaussianityProxy) {
  const auto c = reference_network();
  const auto init = reference_initial(40, 20);
  const auto cfg = config(2e-2, 1.0, 0.0, 50);
  const auto panel = panel::standard(2);
  std::vector<Vec> samples(panel.size());
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto tan = simulate_tangent(init, c, cfg, NoisePath::generate(1000 + seed, 2e-2, 50, c.channels()));
    for (std::size_t f = 0; f < panel.size(); ++f) samples[f].push_back(field_pair(tan.final(), panel[f]));
  }
  for (std::size_t f = 0; f < panel.size(); ++f) {
    if (panel[f].name == "const") continue;
    EXPECT_LT(std::abs(stats::skewness(samples[f])), 0.35) << panel[f].name;
    EXPECT_LT(std::abs(stats::excess_kurtosis(samples[f])), 0.7) << panel[f].name;
  }
}

TEST(FluctuationLaw, VarianceMatchesMartingaleIdentity) {
  const auto c = pure_noise_2d();
  const auto init = reference_initial(30, 21);
  const double T = 0.5;
  const auto cfg = config(1e-2, T, 0.0, 50);
  const auto w = c.channel_weights();
  for (const auto& phi : panel::bounded(2)) {
    Vec s;
    for (std::uint64_t seed = 0; seed < 400; ++seed)
      s.push_back(field_pair(simulate_tangent(init, c, cfg, NoisePath::generate(5000 + seed, 1e-2, 50, 3)).final(), phi));
    double predicted = 0.0;
    for (std::size_t p = 0; p < 3; ++p) {
      double m = 0.0;
      for (std::size_t i = 0; i < init.size(); ++i) {
        const auto g = c.noise_matrix(init.atoms[i], init);
        m += init.weights[i] * dot(phi.grad(init.atoms[i]), std::span<const double>(g.a.data() + p * 2, 2));
      }
      predicted += T * w[p] * m * m;
    }
    EXPECT_NEAR(stats::variance(s), predicted, 3.0 * stats::variance_standard_error(s)) << phi.name;
  }
}
