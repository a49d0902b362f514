#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "layerscope/kernels.hpp"
#include "layerscope/rng.hpp"

namespace ls = layerscope;
namespace k = layerscope::kernels;

namespace {

std::vector<float> random_f(std::size_t n, std::uint64_t seed) {
  ls::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

std::vector<double> random_d(std::size_t n, std::uint64_t seed) {
  ls::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// plain triple loop in double, independent of both kernel variants
std::vector<double> naive_gemm(std::size_t m, std::size_t n, std::size_t kk, const std::vector<float>& a, bool ta,
                               const std::vector<float>& b, bool tb) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < kk; ++p) {
        const double av = ta ? a[p * m + i] : a[i * kk + p];
        const double bv = tb ? b[j * kk + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  }
  return c;
}

void expect_close(const std::vector<float>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_NEAR(got[i], want[i], tol * (1.0 + std::abs(want[i]))) << "index " << i;
  }
}

struct Dims {
  std::size_t m, n, k;
};

const Dims kShapes[] = {{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {17, 31, 9}, {64, 33, 70}, {5, 129, 3}};

}  // namespace

TEST(Kernels, ScalarGemmMatchesNaive) {
  for (const Dims& d : kShapes) {
    const auto a = random_f(d.m * d.k, 1), b = random_f(d.k * d.n, 2);
    std::vector<float> c(d.m * d.n, 0.0f);
    k::scalar::gemm_nn(d.m, d.n, d.k, a.data(), d.k, b.data(), d.n, c.data(), d.n);
    expect_close(c, naive_gemm(d.m, d.n, d.k, a, false, b, false), 1e-5);

    const auto bt = random_f(d.n * d.k, 3);
    std::fill(c.begin(), c.end(), 0.0f);
    k::scalar::gemm_nt(d.m, d.n, d.k, a.data(), d.k, bt.data(), d.k, c.data(), d.n);
    expect_close(c, naive_gemm(d.m, d.n, d.k, a, false, bt, true), 1e-5);

    const auto at = random_f(d.k * d.m, 4);
    std::fill(c.begin(), c.end(), 0.0f);
    k::scalar::gemm_tn(d.m, d.n, d.k, at.data(), d.m, b.data(), d.n, c.data(), d.n);
    expect_close(c, naive_gemm(d.m, d.n, d.k, at, true, b, false), 1e-5);
  }
}

TEST(Kernels, GemmAccumulatesIntoC) {
  const auto a = random_f(6, 5), b = random_f(6, 6);
  std::vector<float> c(4, 1.0f);
  k::gemm_nn(2, 2, 3, a.data(), 3, b.data(), 2, c.data(), 2);
  const auto want = naive_gemm(2, 2, 3, a, false, b, false);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(c[i], want[i] + 1.0, 1e-6);
}

class Avx2Equivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!k::avx2::compiled() || k::detected_isa() != k::Isa::Avx2) GTEST_SKIP() << "AVX2 not available";
  }
};

TEST_F(Avx2Equivalence, Gemm) {
  for (const Dims& d : kShapes) {
    const auto a = random_f(d.m * d.k, 11), b = random_f(d.k * d.n, 12), bt = random_f(d.n * d.k, 13),
               at = random_f(d.k * d.m, 14);
    std::vector<float> cs(d.m * d.n, 0.5f), cv(d.m * d.n, 0.5f);
    k::scalar::gemm_nn(d.m, d.n, d.k, a.data(), d.k, b.data(), d.n, cs.data(), d.n);
    k::avx2::gemm_nn(d.m, d.n, d.k, a.data(), d.k, b.data(), d.n, cv.data(), d.n);
    for (std::size_t i = 0; i < cs.size(); ++i) EXPECT_NEAR(cs[i], cv[i], 1e-4f);

    std::fill(cs.begin(), cs.end(), 0.0f);
    std::fill(cv.begin(), cv.end(), 0.0f);
    k::scalar::gemm_nt(d.m, d.n, d.k, a.data(), d.k, bt.data(), d.k, cs.data(), d.n);
    k::avx2::gemm_nt(d.m, d.n, d.k, a.data(), d.k, bt.data(), d.k, cv.data(), d.n);
    for (std::size_t i = 0; i < cs.size(); ++i) EXPECT_NEAR(cs[i], cv[i], 1e-4f);

    std::fill(cs.begin(), cs.end(), 0.0f);
    std::fill(cv.begin(), cv.end(), 0.0f);
    k::scalar::gemm_tn(d.m, d.n, d.k, at.data(), d.m, b.data(), d.n, cs.data(), d.n);
    k::avx2::gemm_tn(d.m, d.n, d.k, at.data(), d.m, b.data(), d.n, cv.data(), d.n);
    for (std::size_t i = 0; i < cs.size(); ++i) EXPECT_NEAR(cs[i], cv[i], 1e-4f);
  }
}

TEST_F(Avx2Equivalence, VectorKernels) {
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 31u, 100u, 1027u}) {
    const auto x = random_f(n, 21), y = random_f(n, 22);
    EXPECT_NEAR(k::scalar::dot_f32(x.data(), y.data(), n), k::avx2::dot_f32(x.data(), y.data(), n), 1e-4);
    const auto xd = random_d(n, 23), yd = random_d(n, 24);
    EXPECT_NEAR(k::scalar::dot_f64(xd.data(), yd.data(), n), k::avx2::dot_f64(xd.data(), yd.data(), n), 1e-12);

    auto ys = y, yv = y;
    k::scalar::axpy_f32(0.37f, x.data(), ys.data(), n);
    k::avx2::axpy_f32(0.37f, x.data(), yv.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(ys[i], yv[i], 1e-6f);

    auto yds = yd, ydv = yd;
    k::scalar::axpy_f64(-1.5, xd.data(), yds.data(), n);
    k::avx2::axpy_f64(-1.5, xd.data(), ydv.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(yds[i], ydv[i], 1e-14);
  }
}

TEST_F(Avx2Equivalence, Syrk) {
  for (std::size_t d : {1u, 3u, 4u, 5u, 16u, 33u}) {
    const std::size_t rows = 57;
    const auto x = random_d(rows * d, 31);
    std::vector<double> ms(d * d, 0.0), mv(d * d, 0.0);
    k::scalar::syrk_upper_f64(rows, d, x.data(), d, ms.data(), d);
    k::avx2::syrk_upper_f64(rows, d, x.data(), d, mv.data(), d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) EXPECT_NEAR(ms[i * d + j], mv[i * d + j], 1e-10);
    }
  }
}

TEST(Kernels, SyrkRowSplitIsBitIdentical) {
  for (k::Isa isa : {k::Isa::Scalar, k::Isa::Avx2}) {
    k::set_active_isa(isa);
    const std::size_t rows = 40, d = 9;
    const auto x = random_d(rows * d, 41);
    std::vector<double> whole(d * d, 0.0), split(d * d, 0.0);
    k::syrk_upper_f64(rows, d, x.data(), d, whole.data(), d);
    k::syrk_upper_f64(13, d, x.data(), d, split.data(), d);
    k::syrk_upper_f64(rows - 13, d, x.data() + 13 * d, d, split.data(), d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) EXPECT_EQ(whole[i * d + j], split[i * d + j]);
    }
  }
  k::set_active_isa(k::detected_isa());
}

TEST(Kernels, ThreadCountDoesNotChangeResults) {
  // 97 rows split unevenly, so rows move between blocked and remainder paths
  const std::size_t m = 97, n = 45, kk = 61;
  const auto a = random_f(m * kk, 51), b = random_f(kk * n, 52);
  for (k::Isa isa : {k::Isa::Scalar, k::Isa::Avx2}) {
    k::set_active_isa(isa);
    k::set_threads(1);
    std::vector<float> one(m * n, 0.0f);
    k::gemm_nn(m, n, kk, a.data(), kk, b.data(), n, one.data(), n);
    for (int t : {2, 3, 8}) {
      k::set_threads(t);
      EXPECT_EQ(k::threads(), t);
      std::vector<float> many(m * n, 0.0f);
      k::gemm_nn(m, n, kk, a.data(), kk, b.data(), n, many.data(), n);
      EXPECT_EQ(one, many) << t << " threads, " << k::isa_name(isa);
    }
  }
  k::set_threads(1);
  k::set_active_isa(k::detected_isa());
}

TEST(Kernels, PinnedIsaIsReported) {
  k::set_active_isa(k::Isa::Scalar);
  EXPECT_EQ(k::active_isa(), k::Isa::Scalar);
  EXPECT_EQ(k::isa_name(k::Isa::Scalar), "scalar");
  k::set_active_isa(k::detected_isa());
  EXPECT_EQ(k::active_isa(), k::detected_isa());
}
