#include <gtest/gtest.h>

#include <cmath>

#include "layerscope/rng.hpp"
#include "layerscope/saturation.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace layerscope;
using test_support::code_of;

namespace {

CovAccumulator accumulate_rows(const std::vector<float>& x, std::size_t n, std::size_t d) {
  CovAccumulator acc(d);
  const std::uint64_t shape[2] = {n, d};
  acc.accumulate(x, shape);
  return acc;
}

void expect_rel(const std::vector<double>& a, const std::vector<double>& b, double rel) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LE(std::abs(a[i] - b[i]), rel * std::max(std::abs(a[i]), std::abs(b[i])) + 1e-300) << "index " << i;
  }
}

// Rotated copy of an n x d sample matrix.
std::vector<float> rotate(const std::vector<float>& x, std::size_t n, std::size_t d, const Eigen::MatrixXd& r) {
  std::vector<float> out(x.size());
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < d; ++i) v[static_cast<Eigen::Index>(i)] = x[s * d + i];
    const Eigen::VectorXd w = r * v;
    for (std::size_t i = 0; i < d; ++i) out[s * d + i] = static_cast<float>(w[static_cast<Eigen::Index>(i)]);
  }
  return out;
}

}  // namespace

TEST(CovAccumulator, TwoUnitSamples) {
  CovAccumulator acc(2);
  const std::vector<double> rows = {1, 0, 0, 1};
  acc.accumulate_rows(rows, 2);
  EXPECT_EQ(acc.count(), 2u);
  EXPECT_EQ(acc.sum(), (std::vector<double>{1, 1}));
  EXPECT_EQ(acc.moment2(), (std::vector<double>{1, 0, 0, 1}));
}

TEST(CovAccumulator, ConvPositionsAreSamples) {
  CovAccumulator acc(2);
  // (N, C, H, W) = (1, 2, 2, 2): channel 0 holds 1..4, channel 1 holds 10..40
  const std::vector<float> block = {1, 2, 3, 4, 10, 20, 30, 40};
  const std::uint64_t shape[4] = {1, 2, 2, 2};
  acc.accumulate(block, shape);
  EXPECT_EQ(acc.count(), 4u);
  EXPECT_EQ(acc.sum(), (std::vector<double>{10, 100}));
  EXPECT_EQ(acc.moment2()[1], 1 * 10 + 2 * 20 + 3 * 30 + 4 * 40);
}

TEST(CovAccumulator, HalfBlocksEqualOneBlock) {
  Rng rng(1);
  const auto g = oracles::gaussian_instance(rng, 100, oracles::random_spectrum(rng, 6));
  const CovAccumulator whole = accumulate_rows(g.x, 100, 6);
  CovAccumulator halves(6);
  const std::uint64_t shape[2] = {50, 6};
  halves.accumulate(std::span<const float>(g.x).subspan(0, 300), shape);
  halves.accumulate(std::span<const float>(g.x).subspan(300), shape);
  EXPECT_EQ(whole.count(), halves.count());
  EXPECT_EQ(whole.sum(), halves.sum());
  EXPECT_EQ(whole.moment2(), halves.moment2());
}

TEST(CovAccumulator, DimensionMismatch) {
  CovAccumulator acc(3);
  const std::vector<float> block(8, 1.0f);
  const std::uint64_t shape[2] = {4, 2};
  EXPECT_EQ(code_of([&] { acc.accumulate(block, shape); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([&] { acc.merge(CovAccumulator(2)); }), ErrorCode::DimensionMismatch);
}

TEST(CovAccumulator, MergeProperties) {
  Rng rng(2);
  const std::size_t n = 2000, d = 8;
  const auto g = oracles::gaussian_instance(rng, n, oracles::random_spectrum(rng, d));
  const CovAccumulator full = accumulate_rows(g.x, n, d);

  std::vector<float> a, b;
  for (std::size_t s = 0; s < n; ++s) {
    auto& dst = rng.below(2) ? a : b;
    dst.insert(dst.end(), g.x.begin() + static_cast<std::ptrdiff_t>(s * d),
               g.x.begin() + static_cast<std::ptrdiff_t>((s + 1) * d));
  }
  const CovAccumulator ca = accumulate_rows(a, a.size() / d, d);
  const CovAccumulator cb = accumulate_rows(b, b.size() / d, d);
  const CovAccumulator ab = merge(ca, cb), ba = merge(cb, ca);
  expect_rel(ab.covariance(), full.covariance(), 1e-9);
  expect_rel(ab.covariance(), ba.covariance(), 1e-12);
  EXPECT_EQ(ab.count(), n);

  const CovAccumulator with_empty = merge(full, CovAccumulator(d));
  EXPECT_EQ(with_empty.moment2(), full.moment2());
  EXPECT_EQ(with_empty.sum(), full.sum());
}

TEST(Saturation, IsotropicNeedsEveryDirection) {
  CovAccumulator acc(10);
  std::vector<double> rows;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) rows.push_back(i == j ? 1.0 : 0.0);
    for (int j = 0; j < 10; ++j) rows.push_back(i == j ? -1.0 : 0.0);
  }
  acc.accumulate_rows(rows, 20);
  const SaturationResult s = saturation_of(acc);
  EXPECT_EQ(s.k, 10u);
  EXPECT_DOUBLE_EQ(s.value, 1.0);
}

TEST(Saturation, RankOne) {
  Rng rng(3);
  CovAccumulator acc(10);
  std::vector<double> dir(10);
  for (double& v : dir) v = rng.normal();
  std::vector<double> rows;
  for (int s = 0; s < 200; ++s) {
    const double t = rng.normal();
    for (double v : dir) rows.push_back(t * v);
  }
  acc.accumulate_rows(rows, 200);
  const SaturationResult s = saturation_of(acc);
  EXPECT_EQ(s.k, 1u);
  EXPECT_DOUBLE_EQ(s.value, 0.1);
}

TEST(Saturation, ZeroTraceGivesOne) {
  CovAccumulator acc(4);
  const std::vector<double> rows(12, 3.0);
  acc.accumulate_rows(rows, 3);
  EXPECT_EQ(saturation_of(acc).k, 1u);
}

TEST(Saturation, DominantDirectionMatchesOracle) {
  Rng rng(4);
  std::vector<double> spectrum = {100, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  const auto g = oracles::gaussian_instance(rng, 10000, spectrum);
  const auto oracle = oracles::pca_spectrum(g.x, g.n, g.d);
  const SaturationResult s = saturation_of(accumulate_rows(g.x, g.n, g.d));
  EXPECT_EQ(s.k, oracles::pca_k(oracle, 0.99));
  expect_rel(s.eigvals, oracle, 1e-6);
}

TEST(Saturation, MatchesPcaOracleOnRandomInstances) {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t d = 2 + rng.below(31);
    const std::size_t n = d + 2 + rng.below(3000);
    const auto g = oracles::gaussian_instance(rng, n, oracles::random_spectrum(rng, d));
    const auto oracle = oracles::pca_spectrum(g.x, n, d);
    const SaturationResult s = saturation_of(accumulate_rows(g.x, n, d));
    EXPECT_EQ(s.k, oracles::pca_k(oracle, 0.99)) << "d=" << d << " n=" << n;
    expect_rel(s.eigvals, oracle, 1e-6);
    EXPECT_EQ(s.d, d);
    EXPECT_GE(s.k, 1u);
    EXPECT_LE(s.k, d);
    EXPECT_TRUE(std::is_sorted(s.eigvals.rbegin(), s.eigvals.rend()));
  }
}

TEST(Saturation, RotationAndScaleInvariance) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 3 + rng.below(14), n = 1500;
    const auto g = oracles::gaussian_instance(rng, n, oracles::random_spectrum(rng, d));
    const std::size_t k = saturation_of(accumulate_rows(g.x, n, d)).k;
    const auto rotated = rotate(g.x, n, d, oracles::random_rotation(rng, d));
    EXPECT_EQ(saturation_of(accumulate_rows(rotated, n, d)).k, k);
    std::vector<float> scaled = g.x;
    for (float& v : scaled) v *= 7.5f;
    EXPECT_EQ(saturation_of(accumulate_rows(scaled, n, d)).k, k);
  }
}

TEST(Saturation, MonotoneInDelta) {
  Rng rng(7);
  const auto g = oracles::gaussian_instance(rng, 3000, oracles::random_spectrum(rng, 24));
  const CovAccumulator acc = accumulate_rows(g.x, 3000, 24);
  std::size_t prev = 0;
  for (double delta : {0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 0.999, 1.0}) {
    const std::size_t k = saturation_of(acc, delta).k;
    EXPECT_GE(k, prev) << delta;
    prev = k;
  }
}

TEST(Saturation, TieKeepsSmallerK) {
  const std::vector<double> eig = {3, 1, 0, 0};
  EXPECT_EQ(retained_directions(eig, 0.75), 1u);
  EXPECT_EQ(retained_directions(eig, 1.0), 2u);
}

TEST(Saturation, Errors) {
  CovAccumulator one(2);
  const std::vector<double> row = {1, 2};
  one.accumulate_rows(row, 1);
  EXPECT_EQ(code_of([&] { saturation_of(one); }), ErrorCode::NotEnoughSamples);

  CovAccumulator bad(2);
  const std::vector<double> rows = {1, 2, std::nan(""), 1};
  bad.accumulate_rows(rows, 2);
  EXPECT_EQ(code_of([&] { saturation_of(bad); }), ErrorCode::NonFinite);
}

TEST(Saturation, JsonCarriesSpectrum) {
  Rng rng(8);
  const auto g = oracles::gaussian_instance(rng, 100, oracles::random_spectrum(rng, 4));
  const auto j = saturation_to_json(saturation_of(accumulate_rows(g.x, 100, 4)));
  EXPECT_EQ(j.at("d"), 4);
  EXPECT_EQ(j.at("eigvals").size(), 4u);
  EXPECT_TRUE(j.contains("k"));
  EXPECT_TRUE(j.contains("value"));
  EXPECT_TRUE(j.contains("delta"));
}
