#include "layerscope/kernels.hpp"

namespace layerscope::kernels::scalar {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = a[i * lda + p];
      if (aip == 0.0f) continue;
      const float* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * ldc + j] += dot_f32(a + i * lda, b + j * ldb, k);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  for (std::size_t p = 0; p < k; ++p) {
    const float* arow = a + p * lda;
    const float* brow = b + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      const float api = arow[i];
      if (api == 0.0f) continue;
      float* crow = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

float dot_f32(const float* x, const float* y, std::size_t n) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double dot_f64(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void syrk_upper_f64(std::size_t rows, std::size_t d, const double* x, std::size_t ldx, double* m,
                    std::size_t ldm) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * ldx;
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = xr[i];
      double* mrow = m + i * ldm;
      for (std::size_t j = i; j < d; ++j) mrow[j] += xi * xr[j];
    }
  }
}

}  // namespace layerscope::kernels::scalar
