#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "layerscope/kernels.hpp"

namespace layerscope::kernels {

#ifndef LAYERSCOPE_HAVE_AVX2_TU
namespace avx2 {
bool compiled() { return false; }
// Never selected: detected_isa() reports Scalar when this TU is absent.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  scalar::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  scalar::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  scalar::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc);
}
float dot_f32(const float* x, const float* y, std::size_t n) { return scalar::dot_f32(x, y, n); }
double dot_f64(const double* x, const double* y, std::size_t n) { return scalar::dot_f64(x, y, n); }
void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  scalar::axpy_f32(alpha, x, y, n);
}
void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  scalar::axpy_f64(alpha, x, y, n);
}
void syrk_upper_f64(std::size_t rows, std::size_t d, const double* x, std::size_t ldx, double* m,
                    std::size_t ldm) {
  scalar::syrk_upper_f64(rows, d, x, ldx, m, ldm);
}
}  // namespace avx2
#endif

namespace {

using GemmFn = void (*)(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                        const float*, std::size_t, float*, std::size_t);

struct Table {
  GemmFn gemm_nn;
  GemmFn gemm_nt;
  GemmFn gemm_tn;
  float (*dot_f32)(const float*, const float*, std::size_t);
  double (*dot_f64)(const double*, const double*, std::size_t);
  void (*axpy_f32)(float, const float*, float*, std::size_t);
  void (*axpy_f64)(double, const double*, double*, std::size_t);
  void (*syrk_upper_f64)(std::size_t, std::size_t, const double*, std::size_t, double*,
                         std::size_t);
};

constexpr Table kScalar{scalar::gemm_nn, scalar::gemm_nt, scalar::gemm_tn,  scalar::dot_f32,
                        scalar::dot_f64, scalar::axpy_f32, scalar::axpy_f64, scalar::syrk_upper_f64};
constexpr Table kAvx2{avx2::gemm_nn, avx2::gemm_nt, avx2::gemm_tn,  avx2::dot_f32,
                      avx2::dot_f64, avx2::axpy_f32, avx2::axpy_f64, avx2::syrk_upper_f64};

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  Isa isa = detected_isa();
  if (const char* env = std::getenv("LAYERSCOPE_ISA")) {
    const std::string v(env);
    if (v == "scalar") isa = Isa::Scalar;
  }
  return isa;
}

Isa g_active = initial_isa();
int g_threads = 1;

// Splits the m rows of a gemm into contiguous blocks, one per thread.
template <typename Fn>
void split_rows(std::size_t m, std::size_t work_per_row, Fn&& fn) {
  const std::size_t t = static_cast<std::size_t>(g_threads);
  if (t <= 1 || m < 2 * t || m * work_per_row < (1u << 16)) {
    fn(std::size_t{0}, m);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t per = (m + t - 1) / t;
  for (std::size_t begin = per; begin < m; begin += per) {
    pool.emplace_back([&fn, begin, end = std::min(m, begin + per)] { fn(begin, end); });
  }
  fn(0, std::min(m, per));
  for (auto& th : pool) th.join();
}

const Table& table() { return g_active == Isa::Avx2 ? kAvx2 : kScalar; }

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
  static const Isa isa = (avx2::compiled() && cpu_has_avx2()) ? Isa::Avx2 : Isa::Scalar;
  return isa;
}

Isa active_isa() { return g_active; }

void set_active_isa(Isa isa) {
  g_active = (isa == Isa::Avx2 && detected_isa() != Isa::Avx2) ? Isa::Scalar : isa;
}

void set_threads(int threads) { g_threads = std::max(1, threads); }
int threads() { return g_threads; }

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  const auto fn = table().gemm_nn;
  split_rows(m, n * k, [&](std::size_t r0, std::size_t r1) {
    fn(r1 - r0, n, k, a + r0 * lda, lda, b, ldb, c + r0 * ldc, ldc);
  });
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  const auto fn = table().gemm_nt;
  split_rows(m, n * k, [&](std::size_t r0, std::size_t r1) {
    fn(r1 - r0, n, k, a + r0 * lda, lda, b, ldb, c + r0 * ldc, ldc);
  });
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  // rows of C are columns of A here
  const auto fn = table().gemm_tn;
  split_rows(m, n * k, [&](std::size_t r0, std::size_t r1) {
    fn(r1 - r0, n, k, a + r0, lda, b, ldb, c + r0 * ldc, ldc);
  });
}

float dot_f32(const float* x, const float* y, std::size_t n) { return table().dot_f32(x, y, n); }

double dot_f64(const double* x, const double* y, std::size_t n) { return table().dot_f64(x, y, n); }

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  table().axpy_f32(alpha, x, y, n);
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  table().axpy_f64(alpha, x, y, n);
}

void syrk_upper_f64(std::size_t rows, std::size_t d, const double* x, std::size_t ldx, double* m,
                    std::size_t ldm) {
  table().syrk_upper_f64(rows, d, x, ldx, m, ldm);
}

}  // namespace layerscope::kernels
