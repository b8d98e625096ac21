#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "sltlab/datagen.hpp"
#include "sltlab/io.hpp"
#include "sltlab/posterior.hpp"

using namespace sltlab;

namespace {

McmcConfig quick_mcmc(std::size_t draws = 5000) {
  McmcConfig c;
  c.burn_in = 2000;
  c.draws_per_chain = draws;
  return c;
}

// Mean and Monte Carlo SE of coordinate j (SE from the multi-chain ESS).
std::pair<double, double> coord_mean_se(const PosteriorSamples& s, std::size_t j) {
  const auto m = expectation(s, 2, [j](std::span<const double> w, std::span<double> out) {
    out[0] = w[j];
    out[1] = w[j] * w[j];
  });
  const double var = m[1] - m[0] * m[0];
  return {m[0], std::sqrt(var / s.diagnostics().ess[j])};
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

TEST(GibbsTargetTest, OutsideRegionIsMinusInfinity) {
  const auto lin = make_model("linear-2");
  const auto truth = TrueProcess::from_model(lin, {0.1, 0.2}, 0.1, default_input(lin));
  const auto d = generate(truth, 20, 1);
  const GibbsTarget t(lin, d, 1.0);
  EXPECT_EQ(t.log_unnormalized(std::vector<double>{1.01, 0.0}), -INFINITY);
  const std::vector<double> a{0.3, -0.2}, b{-0.5, 0.6};
  const double lhs = t.log_unnormalized(a) - t.log_unnormalized(b);
  const double rhs = -(empirical_square_error(lin, d, a) - empirical_square_error(lin, d, b));
  EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(rhs));
  EXPECT_THROW(GibbsTarget(lin, d, -1.0), std::invalid_argument);
}

TEST(Mcmc, PriorRecoveryWithoutData) {
  const auto lin = make_model("linear-2");
  const Dataset empty{.m_in = 2, .n_out = 1};
  const auto s = sample_posterior(GibbsTarget(lin, empty, 1.0), quick_mcmc(), 11);
  for (std::size_t j = 0; j < 2; ++j) {
    const auto [m, se] = coord_mean_se(s, j);
    EXPECT_LT(std::abs(m), 4.0 * se) << "coordinate " << j;
  }
}

TEST(Mcmc, TruncatedConjugateMeanLinear1) {
  // Truth near the boundary so the truncation matters.
  const auto lin = make_model("linear-1");
  const auto truth = TrueProcess::from_model(lin, {0.97}, 0.1, default_input(lin));
  const auto d = generate(truth, 50, 21);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < d.n; ++i) {
    sxx += d.x(i)[0] * d.x(i)[0];
    sxy += d.x(i)[0] * d.y(i)[0];
  }
  // Posterior N(mu, s^2) restricted to [-1, 1].
  const double mu = sxy / sxx, s = 1.0 / std::sqrt(sxx);
  const double a = (-1.0 - mu) / s, b = (1.0 - mu) / s;
  const double exact = mu + s * (normal_pdf(a) - normal_pdf(b)) / (normal_cdf(b) - normal_cdf(a));

  const auto samples = sample_posterior(GibbsTarget(lin, d, 1.0), McmcConfig{}, 5);
  const auto [m, se] = coord_mean_se(samples, 0);
  EXPECT_TRUE(samples.diagnostics().converged);
  EXPECT_LT(std::abs(m - exact), 3.0 * se) << "mcmc " << m << " exact " << exact;
  EXPECT_GT(std::abs(exact - mu), 0.5 * se) << "truncation should shift the mean";
}

TEST(Mcmc, SinmixDrawsStayInBall) {
  const auto sm = make_model("sinmix");
  const auto truth = TrueProcess::from_model(sm, {0, 0, 0, 0}, 0.1, default_input(sm));
  const auto d = generate(truth, 100, 3);
  const auto s = sample_posterior(GibbsTarget(sm, d, 1.0), quick_mcmc(3000), 4);
  for (std::size_t i = 0; i < s.size(); ++i) {
    double r2 = 0;
    for (double v : s.draw(i)) r2 += v * v;
    ASSERT_LE(r2, 1.0);
  }
  for (double a : s.diagnostics().acceptance_rate) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(Mcmc, TemperedSinmixStaysInBallAndSwaps) {
  const auto sm = make_model("sinmix");
  const auto truth = TrueProcess::from_model(sm, {0.5, 0.8, 0, 0}, 0.1, default_input(sm));
  const auto d = generate(truth, 100, 8);
  auto cfg = quick_mcmc(2000);
  cfg.tempering.enabled = true;
  const auto s = sample_posterior(GibbsTarget(sm, d, 1.0), cfg, 9);
  EXPECT_GT(s.diagnostics().swap_acceptance, 0.0);
  EXPECT_LE(s.diagnostics().swap_acceptance, 1.0);
  for (std::size_t i = 0; i < s.size(); ++i) ASSERT_TRUE(sm.region.contains(s.draw(i)));
}

TEST(Mcmc, DeterministicGivenSeed) {
  const auto lin = make_model("linear-2");
  const auto truth = TrueProcess::from_model(lin, {0.1, 0.2}, 0.1, default_input(lin));
  const auto d = generate(truth, 30, 1);
  const GibbsTarget t(lin, d, 1.0);
  const auto a = sample_posterior(t, quick_mcmc(500), 77);
  const auto b = sample_posterior(t, quick_mcmc(500), 77);
  const auto c = sample_posterior(t, quick_mcmc(500), 78);
  EXPECT_EQ(a.raw_draws(), b.raw_draws());
  EXPECT_NE(a.raw_draws(), c.raw_draws());
}

TEST(Mcmc, DoublingDrawsIsStable) {
  const auto sm = make_model("sinmix");
  const auto truth = TrueProcess::from_model(sm, {0.5, 0.8, 0, 0}, 0.1, default_input(sm));
  const auto d = generate(truth, 100, 12);
  const GibbsTarget t(sm, d, 1.0);
  const auto a = sample_posterior(t, quick_mcmc(5000), 1);
  const auto b = sample_posterior(t, quick_mcmc(10000), 2);
  for (std::size_t j = 0; j < 4; ++j) {
    const auto [ma, sa] = coord_mean_se(a, j);
    const auto [mb, sb] = coord_mean_se(b, j);
    EXPECT_LT(std::abs(ma - mb), 3.0 * std::hypot(sa, sb)) << "coordinate " << j;
  }
}

TEST(Mcmc, RejectsBadConfig) {
  const auto lin = make_model("linear-1");
  const Dataset empty{.m_in = 1, .n_out = 1};
  const GibbsTarget t(lin, empty, 1.0);
  McmcConfig c;
  c.n_chains = 1;
  EXPECT_THROW(sample_posterior(t, c, 1), std::invalid_argument);
  c = McmcConfig{};
  c.draws_per_chain = 99;
  EXPECT_THROW(sample_posterior(t, c, 1), std::invalid_argument);
}

TEST(Expectation, ConstantIsExact) {
  const auto lin = make_model("linear-2");
  const Dataset empty{.m_in = 2, .n_out = 1};
  const auto s = sample_posterior(GibbsTarget(lin, empty, 1.0), quick_mcmc(500), 3);
  const auto e = expectation(s, 1, [](std::span<const double>, std::span<double> out) { out[0] = 3.7; });
  EXPECT_EQ(e[0], 3.7);
}

TEST(Expectation, PermutationInvariantAndVarianceNonNegative) {
  const auto sm = make_model("sinmix");
  const auto truth = TrueProcess::from_model(sm, {0.3, 0.6, 0, 0}, 0.1, default_input(sm));
  const auto d = generate(truth, 50, 13);
  const auto s = sample_posterior(GibbsTarget(sm, d, 1.0), quick_mcmc(1000), 14);
  std::vector<double> reversed;
  for (std::size_t i = s.size(); i-- > 0;) {
    const auto w = s.draw(i);
    reversed.insert(reversed.end(), w.begin(), w.end());
  }
  const PosteriorSamples r(sm.region, reversed, {}, 1.0);
  auto f = [](std::span<const double> w, std::span<double> out) {
    out[0] = w[0] * w[1];
    out[1] = out[0] * out[0];
  };
  const auto a = expectation(s, 2, f), b = expectation(r, 2, f);
  EXPECT_NEAR(a[0], b[0], 1e-12 * std::abs(a[0]) + 1e-15);
  EXPECT_GE(a[1] - a[0] * a[0], -1e-12);
}

TEST(Expectation, KMatchesGridOracleLinear2) {
  const auto lin = make_model("linear-2");
  const auto truth = TrueProcess::from_model(lin, {0.2, -0.3}, 0.1, default_input(lin));
  const auto xq = XQuadrature::draw(truth.q(), 10000, 2);
  const LinearKForm kform(lin, truth, xq);
  const auto d = generate(truth, 200, 31);
  const GibbsTarget t(lin, d, 1.0);
  const ParamFn k = [&](std::span<const double> w, std::span<double> out) { out[0] = kform(w); };
  auto cfg = McmcConfig{};
  cfg.draws_per_chain = 40000;
  const double mc = expectation(sample_posterior(t, cfg, 32), 1, k)[0];
  const double oracle = quadrature_expectation(t, 1, k, {.points_per_axis = 512})[0];
  EXPECT_LT(std::abs(mc - oracle), 0.02 * oracle) << mc << " vs " << oracle;
}

TEST(Grid, ConstantAndZeroBeta) {
  const auto lin = make_model("linear-2");
  const auto truth = TrueProcess::from_model(lin, {0.2, -0.3}, 0.1, default_input(lin));
  const auto d = generate(truth, 40, 2);
  const ParamFn c = [](std::span<const double>, std::span<double> out) { out[0] = -1.25; };
  EXPECT_NEAR(quadrature_expectation(GibbsTarget(lin, d, 1.0), 1, c, {})[0], -1.25, 1e-15);
  // beta = 0 and a uniform prior: plain average over midpoints; w_1^2 averages to 1/3 - h^2/12.
  const ParamFn sq = [](std::span<const double> w, std::span<double> out) { out[0] = w[0] * w[0]; };
  const double h = 2.0 / 32.0;
  EXPECT_NEAR(quadrature_expectation(GibbsTarget(lin, d, 0.0), 1, sq, {.points_per_axis = 32})[0],
              1.0 / 3.0 - h * h / 12.0, 1e-14);
}

TEST(Grid, ConjugateErrorShrinksWithRefinement) {
  const auto lin = make_model("linear-1");
  const auto truth = TrueProcess::from_model(lin, {0.97}, 0.1, default_input(lin));
  const auto d = generate(truth, 50, 21);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < d.n; ++i) {
    sxx += d.x(i)[0] * d.x(i)[0];
    sxy += d.x(i)[0] * d.y(i)[0];
  }
  const double mu = sxy / sxx, s = 1.0 / std::sqrt(sxx);
  const double a = (-1.0 - mu) / s, b = (1.0 - mu) / s;
  const double exact = mu + s * (normal_pdf(a) - normal_pdf(b)) / (normal_cdf(b) - normal_cdf(a));
  const GibbsTarget t(lin, d, 1.0);
  const ParamFn f = [](std::span<const double> w, std::span<double> out) { out[0] = w[0]; };
  double prev = INFINITY;
  for (std::size_t p : {16u, 32u, 64u, 128u}) {
    const double err = std::abs(quadrature_expectation(t, 1, f, {.points_per_axis = p})[0] - exact);
    EXPECT_LT(err, prev) << p << " points";
    prev = err;
  }
  EXPECT_LT(prev, 1e-4);
}

TEST(Grid, RejectsHighDimensionAndCoarseGrids) {
  const auto th = make_model("tanh-3");
  const Dataset empty{.m_in = 1, .n_out = 1};
  EXPECT_THROW(grid_posterior(GibbsTarget(th, empty, 1.0), {}), std::invalid_argument);
  const auto lin = make_model("linear-1");
  const Dataset e1{.m_in = 1, .n_out = 1};
  EXPECT_THROW(grid_posterior(GibbsTarget(lin, e1, 1.0), {.points_per_axis = 8}), std::invalid_argument);
}

TEST(Diagnostics, RhatAndEss) {
  Rng rng(5);
  std::vector<std::vector<double>> iid(4, std::vector<double>(4000));
  for (auto& c : iid) {
    for (double& v : c) v = rng.normal();
  }
  EXPECT_NEAR(split_rhat(iid), 1.0, 0.01);
  EXPECT_NEAR(effective_sample_size(iid), 16000.0, 0.1 * 16000.0);

  auto shifted = iid;
  for (double& v : shifted[0]) v += 3.0;
  EXPECT_GT(split_rhat(shifted), 1.5);

  // AR(1) with rho = 0.9: ESS ~ N (1 - rho) / (1 + rho).
  std::vector<std::vector<double>> ar(4, std::vector<double>(20000));
  for (auto& c : ar) {
    double x = rng.normal() / std::sqrt(1.0 - 0.81);
    for (double& v : c) {
      x = 0.9 * x + rng.normal();
      v = x;
    }
  }
  const double expected = 80000.0 * 0.1 / 1.9;
  EXPECT_NEAR(effective_sample_size(ar), expected, 0.2 * expected);
}

TEST(Samples, ValidatesDraws) {
  const auto region = ParameterRegion::cube(1, 1.0);
  EXPECT_THROW(PosteriorSamples(region, {2.0}, {}, 1.0), std::invalid_argument);
  McmcDiagnostics bad;
  bad.acceptance_rate = {1.5};
  EXPECT_THROW(PosteriorSamples(region, {0.0}, {}, 1.0, bad), std::invalid_argument);
}

TEST(Samples, DrawsCsvColumns) {
  const auto lin = make_model("linear-2");
  const Dataset empty{.m_in = 2, .n_out = 1};
  const auto s = sample_posterior(GibbsTarget(lin, empty, 1.0), quick_mcmc(200), 3);
  const auto path = std::filesystem::temp_directory_path() / "sltlab_draws_test.csv";
  write_draws_csv(path, s);
  const auto t = read_csv(path);
  EXPECT_EQ(t.header, (std::vector<std::string>{"w_1", "w_2", "chain", "iteration"}));
  EXPECT_EQ(t.rows.size(), s.size());
  std::filesystem::remove(path);
}
