#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "sltlab/datagen.hpp"
#include "sltlab/io.hpp"

using namespace sltlab;

namespace {

TrueProcess zero_truth(double sigma) {
  const auto lin = make_model("linear-1");
  return TrueProcess::from_model(lin, {0.0}, sigma, default_input(lin));
}

}  // namespace

TEST(Generate, NoiselessLimit) {
  const auto sm = make_model("sinmix");
  const auto truth = TrueProcess::from_model(sm, {0.3, 0.5, -0.2, 0.4}, 1e-12, default_input(sm));
  const auto d = generate(truth, 1000, 1);
  std::vector<double> r0(1);
  for (std::size_t i = 0; i < d.n; ++i) {
    truth.r0(d.x(i), r0);
    ASSERT_LT(std::abs(d.y(i)[0] - r0[0]), 1e-10);
  }
}

TEST(Generate, NoiseVarianceChiSquareBand) {
  const auto d = generate(zero_truth(0.1), 100000, 2);
  double m = 0, v = 0;
  for (double y : d.ys) m += y;
  m /= d.n;
  for (double y : d.ys) v += (y - m) * (y - m);
  v /= (d.n - 1);
  EXPECT_GE(v, 0.0095);
  EXPECT_LE(v, 0.0105);
}

TEST(Generate, ResidualMomentCheck) {
  const auto lin = make_model("linear-3");
  const auto truth = TrueProcess::from_model(lin, {0.5, -0.5, 0.1}, 0.2, default_input(lin));
  const std::size_t n = 20000;
  const auto d = generate(truth, n, 3);
  std::vector<double> r0(1);
  double m = 0, v = 0;
  for (std::size_t i = 0; i < n; ++i) {
    truth.r0(d.x(i), r0);
    const double e = d.y(i)[0] - r0[0];
    m += e;
    v += e * e;
    for (double x : d.x(i)) ASSERT_TRUE(x >= -1.0 && x <= 1.0);
  }
  m /= n;
  v = v / n - m * m;
  EXPECT_LT(std::abs(m), 4.0 * 0.2 / std::sqrt(n));
  EXPECT_LT(std::abs(v / 0.04 - 1.0), 4.0 * std::sqrt(2.0 / n));
}

TEST(Generate, Determinism) {
  const auto t = zero_truth(0.1);
  EXPECT_EQ(generate(t, 50, 7), generate(t, 50, 7));
  const auto a = generate(t, 50, 7), b = generate(t, 50, 8);
  EXPECT_NE(a.xs[0], b.xs[0]);
  EXPECT_NE(a.ys[0], b.ys[0]);
}

TEST(Generate, RejectsEmpty) { EXPECT_THROW(generate(zero_truth(0.1), 0, 1), std::invalid_argument); }

TEST(DatasetFile, RoundTripWithSidecar) {
  const auto sm = make_model("sinmix");
  const auto truth = TrueProcess::from_model(sm, {0, 0, 0, 0}, 0.1, default_input(sm));
  const auto d = generate(truth, 37, 0xDEADBEEFCAFEF00DULL);
  const auto path = std::filesystem::temp_directory_path() / "sltlab_dataset_test.csv";
  save_dataset(path, d, "sinmix", 0.1);
  DatasetSidecar side;
  const auto back = load_dataset(path, &side);
  EXPECT_EQ(back, d);
  EXPECT_EQ(side.n, 37u);
  EXPECT_EQ(side.seed, 0xDEADBEEFCAFEF00DULL);
  EXPECT_EQ(side.model, "sinmix");
  EXPECT_EQ(side.sigma, 0.1);
  std::filesystem::remove(path);
  std::filesystem::remove(sidecar_path(path));
}
