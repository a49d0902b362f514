#pragma once

// Dense arithmetic kernels used by the engine, the covariance accumulator and
// the probe trainer. Every kernel has a portable scalar reference and, on
// x86-64, an AVX2+FMA variant. The active variant is chosen once at startup
// from CPUID and can be pinned with LAYERSCOPE_ISA=scalar|avx2.

#include <cstddef>
#include <string_view>

namespace layerscope::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

/// Best variant the running CPU supports.
Isa detected_isa();

/// Variant currently used by the dispatching entry points below.
Isa active_isa();

/// Pin the dispatch variant. Requesting an unsupported ISA falls back to Scalar.
/// Not thread-safe; call before any concurrent work starts.
void set_active_isa(Isa isa);

/// Worker threads the gemm entry points may split rows across (default 1).
/// Each output element is always produced by one thread in a fixed order, so
/// results do not depend on this setting.
void set_threads(int threads);
int threads();

// All matrices are row-major with explicit leading dimensions. The gemm
// kernels accumulate into C (C += op(A) * op(B)).

/// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc);

/// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc);

/// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc);

float dot_f32(const float* x, const float* y, std::size_t n);
double dot_f64(const double* x, const double* y, std::size_t n);

/// y += alpha * x
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);

/// Upper triangle of M[d x d] += sum over rows r of x_r x_r^T, rows taken in
/// order. Each entry receives one product per row, so splitting the rows into
/// consecutive calls yields bit-identical results.
void syrk_upper_f64(std::size_t rows, std::size_t d, const double* x, std::size_t ldx, double* m,
                    std::size_t ldm);

namespace scalar {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc);
float dot_f32(const float* x, const float* y, std::size_t n);
double dot_f64(const double* x, const double* y, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void syrk_upper_f64(std::size_t rows, std::size_t d, const double* x, std::size_t ldx, double* m,
                    std::size_t ldm);
}  // namespace scalar

namespace avx2 {
bool compiled();
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc);
float dot_f32(const float* x, const float* y, std::size_t n);
double dot_f64(const double* x, const double* y, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void syrk_upper_f64(std::size_t rows, std::size_t d, const double* x, std::size_t ldx, double* m,
                    std::size_t ldm);
}  // namespace avx2

}  // namespace layerscope::kernels
