#include <immintrin.h>

#include <cmath>

#include "layerscope/kernels.hpp"

namespace layerscope::kernels::avx2 {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

// C[m x n] += A * B[k x n] where A(i, p) = a[i * a_rs + p * a_cs].
// Register block: 4 rows x 16 columns.
void gemm_strided_a(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t a_rs,
                    std::size_t a_cs, const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const float* a0 = a + (i + 0) * a_rs;
    const float* a1 = a + (i + 1) * a_rs;
    const float* a2 = a + (i + 2) * a_rs;
    const float* a3 = a + (i + 3) * a_rs;
    float* c0 = c + (i + 0) * ldc;
    float* c1 = c + (i + 1) * ldc;
    float* c2 = c + (i + 2) * ldc;
    float* c3 = c + (i + 3) * ldc;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256 c00 = _mm256_loadu_ps(c0 + j), c01 = _mm256_loadu_ps(c0 + j + 8);
      __m256 c10 = _mm256_loadu_ps(c1 + j), c11 = _mm256_loadu_ps(c1 + j + 8);
      __m256 c20 = _mm256_loadu_ps(c2 + j), c21 = _mm256_loadu_ps(c2 + j + 8);
      __m256 c30 = _mm256_loadu_ps(c3 + j), c31 = _mm256_loadu_ps(c3 + j + 8);
      for (std::size_t p = 0; p < k; ++p) {
        const float* brow = b + p * ldb + j;
        const __m256 b0 = _mm256_loadu_ps(brow);
        const __m256 b1 = _mm256_loadu_ps(brow + 8);
        const std::size_t off = p * a_cs;
        __m256 av = _mm256_broadcast_ss(a0 + off);
        c00 = _mm256_fmadd_ps(av, b0, c00);
        c01 = _mm256_fmadd_ps(av, b1, c01);
        av = _mm256_broadcast_ss(a1 + off);
        c10 = _mm256_fmadd_ps(av, b0, c10);
        c11 = _mm256_fmadd_ps(av, b1, c11);
        av = _mm256_broadcast_ss(a2 + off);
        c20 = _mm256_fmadd_ps(av, b0, c20);
        c21 = _mm256_fmadd_ps(av, b1, c21);
        av = _mm256_broadcast_ss(a3 + off);
        c30 = _mm256_fmadd_ps(av, b0, c30);
        c31 = _mm256_fmadd_ps(av, b1, c31);
      }
      _mm256_storeu_ps(c0 + j, c00);
      _mm256_storeu_ps(c0 + j + 8, c01);
      _mm256_storeu_ps(c1 + j, c10);
      _mm256_storeu_ps(c1 + j + 8, c11);
      _mm256_storeu_ps(c2 + j, c20);
      _mm256_storeu_ps(c2 + j + 8, c21);
      _mm256_storeu_ps(c3 + j, c30);
      _mm256_storeu_ps(c3 + j + 8, c31);
    }
    for (; j + 8 <= n; j += 8) {
      __m256 r0 = _mm256_loadu_ps(c0 + j);
      __m256 r1 = _mm256_loadu_ps(c1 + j);
      __m256 r2 = _mm256_loadu_ps(c2 + j);
      __m256 r3 = _mm256_loadu_ps(c3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256 bv = _mm256_loadu_ps(b + p * ldb + j);
        const std::size_t off = p * a_cs;
        r0 = _mm256_fmadd_ps(_mm256_broadcast_ss(a0 + off), bv, r0);
        r1 = _mm256_fmadd_ps(_mm256_broadcast_ss(a1 + off), bv, r1);
        r2 = _mm256_fmadd_ps(_mm256_broadcast_ss(a2 + off), bv, r2);
        r3 = _mm256_fmadd_ps(_mm256_broadcast_ss(a3 + off), bv, r3);
      }
      _mm256_storeu_ps(c0 + j, r0);
      _mm256_storeu_ps(c1 + j, r1);
      _mm256_storeu_ps(c2 + j, r2);
      _mm256_storeu_ps(c3 + j, r3);
    }
    for (; j < n; ++j) {
      float s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (std::size_t p = 0; p < k; ++p) {
        const float bv = b[p * ldb + j];
        const std::size_t off = p * a_cs;
        s0 = std::fma(a0[off], bv, s0);
        s1 = std::fma(a1[off], bv, s1);
        s2 = std::fma(a2[off], bv, s2);
        s3 = std::fma(a3[off], bv, s3);
      }
      c0[j] = s0;
      c1[j] = s1;
      c2[j] = s2;
      c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const float* ai = a + i * a_rs;
    float* ci = c + i * ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 r = _mm256_loadu_ps(ci + j);
      for (std::size_t p = 0; p < k; ++p) {
        r = _mm256_fmadd_ps(_mm256_broadcast_ss(ai + p * a_cs), _mm256_loadu_ps(b + p * ldb + j), r);
      }
      _mm256_storeu_ps(ci + j, r);
    }
    for (; j < n; ++j) {
      float s = ci[j];
      for (std::size_t p = 0; p < k; ++p) s = std::fma(ai[p * a_cs], b[p * ldb + j], s);
      ci[j] = s;
    }
  }
}

}  // namespace

bool compiled() { return true; }

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_strided_a(m, n, k, a, lda, 1, b, ldb, c, ldc);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_strided_a(m, n, k, a, 1, lda, b, ldb, c, ldc);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* ai = a + i * lda;
    std::size_t j = 0;
    // Two B rows per pass share the A loads.
    for (; j + 2 <= n; j += 2) {
      const float* b0 = b + j * ldb;
      const float* b1 = b0 + ldb;
      __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
      __m256 t0 = _mm256_setzero_ps(), t1 = _mm256_setzero_ps();
      std::size_t p = 0;
      for (; p + 16 <= k; p += 16) {
        const __m256 x0 = _mm256_loadu_ps(ai + p);
        const __m256 x1 = _mm256_loadu_ps(ai + p + 8);
        s0 = _mm256_fmadd_ps(x0, _mm256_loadu_ps(b0 + p), s0);
        s1 = _mm256_fmadd_ps(x1, _mm256_loadu_ps(b0 + p + 8), s1);
        t0 = _mm256_fmadd_ps(x0, _mm256_loadu_ps(b1 + p), t0);
        t1 = _mm256_fmadd_ps(x1, _mm256_loadu_ps(b1 + p + 8), t1);
      }
      for (; p + 8 <= k; p += 8) {
        const __m256 x0 = _mm256_loadu_ps(ai + p);
        s0 = _mm256_fmadd_ps(x0, _mm256_loadu_ps(b0 + p), s0);
        t0 = _mm256_fmadd_ps(x0, _mm256_loadu_ps(b1 + p), t0);
      }
      float r0 = hsum(_mm256_add_ps(s0, s1));
      float r1 = hsum(_mm256_add_ps(t0, t1));
      for (; p < k; ++p) {
        r0 = std::fma(ai[p], b0[p], r0);
        r1 = std::fma(ai[p], b1[p], r1);
      }
      c[i * ldc + j] += r0;
      c[i * ldc + j + 1] += r1;
    }
    for (; j < n; ++j) c[i * ldc + j] += dot_f32(ai, b + j * ldb, k);
  }
}

float dot_f32(const float* x, const float* y, std::size_t n) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), s1);
    s2 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 16), _mm256_loadu_ps(y + i + 16), s2);
    s3 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 24), _mm256_loadu_ps(y + i + 24), s3);
  }
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
  }
  float acc = hsum(_mm256_add_ps(_mm256_add_ps(s0, s1), _mm256_add_ps(s2, s3)));
  for (; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

double dot_f64(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  double acc = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void syrk_upper_f64(std::size_t rows, std::size_t d, const double* x, std::size_t ldx, double* m,
                    std::size_t ldm) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * ldx;
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = xr[i];
      const __m256d xv = _mm256_set1_pd(xi);
      double* mrow = m + i * ldm;
      std::size_t j = i;
      for (; j + 4 <= d; j += 4) {
        _mm256_storeu_pd(mrow + j,
                         _mm256_fmadd_pd(xv, _mm256_loadu_pd(xr + j), _mm256_loadu_pd(mrow + j)));
      }
      for (; j < d; ++j) mrow[j] = std::fma(xi, xr[j], mrow[j]);
    }
  }
}

}  // namespace layerscope::kernels::avx2
