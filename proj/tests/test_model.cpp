#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "sltlab/datagen.hpp"
#include "sltlab/model.hpp"

using namespace sltlab;

namespace {

Dataset make_data(std::size_t m_in, std::vector<double> xs, std::vector<double> ys) {
  Dataset d;
  d.m_in = m_in;
  d.n_out = 1;
  d.n = ys.size();
  d.xs = std::move(xs);
  d.ys = std::move(ys);
  return d;
}

}  // namespace

TEST(Region, ContainsIsExact) {
  const auto box = ParameterRegion::cube(2, 1.0);
  EXPECT_TRUE(box.contains(std::vector<double>{1.0, -1.0}));
  EXPECT_FALSE(box.contains(std::vector<double>{std::nextafter(1.0, 2.0), 0.0}));
  const auto ball = ParameterRegion::ball(4, 1.0);
  EXPECT_TRUE(ball.contains(std::vector<double>{1.0, 0.0, 0.0, 0.0}));
  EXPECT_FALSE(ball.contains(std::vector<double>{0.8, 0.61, 0.0, 0.0}));
  EXPECT_THROW(ParameterRegion::ball(2, 0.0), std::invalid_argument);
  EXPECT_THROW(ParameterRegion::box({{1.0, 1.0}}), std::invalid_argument);
}

TEST(Region, BallVolume) {
  EXPECT_NEAR(ParameterRegion::ball(4, 1.0).volume(), std::numbers::pi * std::numbers::pi / 2.0, 1e-12);
  EXPECT_NEAR(ParameterRegion::cube(3, 1.0).volume(), 8.0, 1e-12);
}

TEST(Prior, DensitiesIntegrateToOne) {
  EXPECT_NEAR(PriorSpec::uniform(ParameterRegion::cube(2, 1.0)).integrate_density(), 1.0, 1e-3);
  EXPECT_NEAR(PriorSpec::truncated_gaussian(ParameterRegion::cube(2, 1.0), 0.5).integrate_density(), 1.0, 1e-3);
  EXPECT_NEAR(PriorSpec::uniform(ParameterRegion::ball(3, 1.0)).integrate_density(), 1.0, 1e-3);
  EXPECT_NEAR(PriorSpec::truncated_gaussian(ParameterRegion::ball(3, 1.0), 0.7).integrate_density(), 1.0, 1e-3);
}

TEST(Prior, LogDensityOutsideIsMinusInfinity) {
  const auto p = PriorSpec::uniform(ParameterRegion::cube(2, 1.0));
  EXPECT_EQ(p.log_density(std::vector<double>{1.5, 0.0}), -INFINITY);
  EXPECT_NEAR(p.density(std::vector<double>{0.2, 0.3}), 0.25, 1e-15);
}

TEST(Catalog, BuiltInShapes) {
  const auto lin = make_model("linear-3");
  EXPECT_EQ(lin.dim, 3u);
  EXPECT_EQ(lin.m_in, 3u);
  EXPECT_EQ(lin.n_out, 1u);
  EXPECT_TRUE(lin.linear_in_w);
  const auto sm = make_model("sinmix");
  EXPECT_EQ(sm.dim, 4u);
  EXPECT_EQ(sm.region.kind(), ParameterRegion::Kind::ball);
  const auto th = make_model("tanh-2");
  EXPECT_EQ(th.dim, 4u);
  EXPECT_THROW(make_model("quadratic-2"), std::invalid_argument);
}

TEST(Catalog, EvaluateIsDeterministic) {
  const auto sm = make_model("sinmix");
  const std::vector<double> x{0.7}, w{0.3, -0.5, 0.2, 0.9};
  std::vector<double> a(1), b(1);
  sm.evaluate(x, w, a);
  sm.evaluate(x, w, b);
  EXPECT_EQ(a[0], b[0]);
  EXPECT_EQ(a[0], 0.3 * std::sin(-0.5 * 0.7) + 0.2 * std::sin(0.9 * 0.7));
}

TEST(SquareError, ExactFitIsZero) {
  const auto lin = make_model("linear-2");
  const std::vector<double> w{0.4, -0.2};
  const auto d = make_data(2, {1.0, 2.0, -0.5, 0.3}, {0.4 - 0.4, -0.2 - 0.06});
  EXPECT_EQ(empirical_square_error(lin, d, w), 0.0);
}

TEST(SquareError, SinglePairHalfSquare) {
  // sinmix at w = 0 gives r = 0; y = 3 -> 4.5
  const auto sm = make_model("sinmix");
  const auto d = make_data(1, {0.5}, {3.0});
  EXPECT_EQ(empirical_square_error(sm, d, std::vector<double>{0, 0, 0, 0}), 4.5);
}

TEST(SquareError, FivePairsHandComputed) {
  const auto lin = make_model("linear-2");
  const auto d = make_data(2, {0.5, -1.0, 1.5, 2.0, -0.3, 0.7, 2.0, 0.0, 0.1, -0.4}, {1.0, -2.0, 0.5, 3.0, 0.0});
  // residuals 0.25, -1.25, 1.01, 2.4, -0.27 at w = (0.3, -0.6)
  const double expected = 0.5 * (0.0625 + 1.5625 + 1.0201 + 5.76 + 0.0729);
  EXPECT_NEAR(empirical_square_error(lin, d, std::vector<double>{0.3, -0.6}), expected, 1e-14);
}

TEST(SquareError, RejectsBadInput) {
  const auto lin = make_model("linear-2");
  const auto d = make_data(2, {1.0, 1.0}, {0.0});
  EXPECT_THROW(empirical_square_error(lin, d, std::vector<double>{1.5, 0.0}), std::invalid_argument);
  EXPECT_THROW(empirical_square_error(lin, Dataset{.m_in = 2, .n_out = 1}, std::vector<double>{0.0, 0.0}),
               std::invalid_argument);
}

TEST(PopulationK, ZeroAtTruthAndOnSinmixZeroSet) {
  const auto sm = make_model("sinmix");
  const auto truth = TrueProcess::from_model(sm, {0, 0, 0, 0}, 0.1, default_input(sm));
  const auto xq = XQuadrature::draw(truth.q(), 2000, 5);
  EXPECT_EQ(population_k(sm, truth, std::vector<double>{0, 0, 0, 0}, xq), 0.0);
  for (double a : {-0.6, 0.1, 0.5}) {
    for (double c : {-0.3, 0.0, 0.7}) {
      EXPECT_EQ(population_k(sm, truth, std::vector<double>{a, 0.0, c, 0.0}, xq), 0.0);
      EXPECT_EQ(population_k(sm, truth, std::vector<double>{0.0, a, 0.0, c}, xq), 0.0);
    }
  }
}

TEST(PopulationK, SinSquaredQuarter) {
  // w = (1, 1, 0, 0) is outside the unit ball, so use the same regression on the cube [-1, 1]^4.
  auto sm = make_model("sinmix");
  sm.region = ParameterRegion::cube(4, 1.0);
  sm.prior = PriorSpec::uniform(sm.region);
  const auto truth = TrueProcess::from_model(sm, {0, 0, 0, 0}, 0.1, default_input(sm));
  const int m = 200000;
  double dense = 0;
  for (int i = 0; i < m; ++i) {
    const double x = -std::numbers::pi + (i + 0.5) * 2.0 * std::numbers::pi / m;
    dense += std::sin(x) * std::sin(x);
  }
  const double expected = 0.5 * dense / m;
  EXPECT_NEAR(expected, 0.25, 1e-12);
  // Var(sin^2) = 1/8, so the SE of K over 1e5 nodes is sqrt(1/8) / 2 / sqrt(1e5).
  const auto xq = XQuadrature::draw(truth.q(), 100000, 17);
  const double se = std::sqrt(0.125) / 2.0 / std::sqrt(1e5);
  EXPECT_NEAR(population_k(sm, truth, std::vector<double>{1.0, 1.0, 0.0, 0.0}, xq), expected, 4.0 * se);
}

TEST(PopulationK, LinearFormMatchesDirectSum) {
  const auto lin = make_model("linear-2");
  const auto truth = TrueProcess::from_model(lin, {0.2, -0.1}, 0.1, default_input(lin));
  const auto xq = XQuadrature::draw(truth.q(), 5000, 9);
  const LinearKForm kform(lin, truth, xq);
  for (const auto& w : std::vector<std::vector<double>>{{0.2, -0.1}, {0.5, 0.5}, {-1.0, 1.0}}) {
    EXPECT_NEAR(kform(w), population_k(lin, truth, w, xq), 1e-12);
  }
}

TEST(PopulationK, QuadratureConvergesWithSize) {
  // linear-1 at w = 1: K = 1/6 exactly; the error should shrink as Q grows.
  const auto lin = make_model("linear-1");
  const auto truth = TrueProcess::from_model(lin, {0.0}, 0.1, default_input(lin));
  double prev = INFINITY;
  for (std::size_t q : {1000u, 10000u, 100000u}) {
    double err = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto xq = XQuadrature::draw(truth.q(), q, 1000 + s);
      err += std::abs(population_k(lin, truth, std::vector<double>{1.0}, xq) - 1.0 / 6.0);
    }
    EXPECT_LT(err, prev);
    prev = err;
  }
}

TEST(TrueProcessTest, SValueIsExact) {
  const auto lin = make_model("linear-2");
  const auto truth = TrueProcess::from_model(lin, {0.0, 0.0}, 0.3, default_input(lin));
  EXPECT_EQ(truth.s_value(), 1.0 * 0.3 * 0.3 / 2.0);
}

TEST(SquareError, AveragesToNSAtTruth) {
  const auto lin = make_model("linear-2");
  const auto truth = TrueProcess::from_model(lin, {0.3, -0.4}, 0.1, default_input(lin));
  const std::size_t n = 50;
  std::vector<double> hs;
  for (std::uint64_t r = 0; r < 400; ++r) {
    hs.push_back(empirical_square_error(lin, generate(truth, n, 500 + r), truth.true_parameter()));
  }
  double m = 0, v = 0;
  for (double h : hs) m += h;
  m /= hs.size();
  for (double h : hs) v += (h - m) * (h - m);
  const double se = std::sqrt(v / (hs.size() - 1) / hs.size());
  EXPECT_NEAR(m, n * truth.s_value(), 4.0 * se);
}
