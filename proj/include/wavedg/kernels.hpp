#pragma once

#include <cstddef>

// Double-precision arithmetic kernels used by the tensor ops.
// Every kernel has a scalar reference implementation and, on x86 machines
// with AVX2+FMA, a vectorized variant. The active variant is chosen once at
// startup from cpuid, overridable with WAVEDG_KERNELS=scalar|avx2|auto.
// Scalar and AVX2 variants accumulate in the same element order, so they
// agree to rounding (FMA contraction); the equivalence tests pin this down.

namespace wavedg::kernels {

enum class Backend { scalar, avx2 };

Backend active();
const char* backend_name(Backend b);
bool avx2_compiled();
bool avx2_supported();

// Dispatched entry points.
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x
void scale(double alpha, double* x, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void relu_backward(const double* x, const double* dy, double* dx, std::size_t n);  // dx += dy * (x > 0)
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);

// C[m,n] = (accumulate ? C : 0) + A[m,k] * B[k,n], row-major, dense.
void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

namespace scalar {
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void relu_backward(const double* x, const double* dy, double* dx, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);
}  // namespace scalar

#ifdef WAVEDG_HAVE_AVX2
namespace avx2 {
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void relu_backward(const double* x, const double* dy, double* dx, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);
}  // namespace avx2
#endif

}  // namespace wavedg::kernels
