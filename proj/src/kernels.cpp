#include "wavedg/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace wavedg::kernels {

namespace scalar {

void add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale(double alpha, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void relu(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0.0) dx[i] += dy[i];
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace scalar

namespace {

Backend resolve_backend() {
  const char* env = std::getenv("WAVEDG_KERNELS");
#ifdef WAVEDG_HAVE_AVX2
  bool want_avx2 = avx2_supported();
  if (env) {
    if (std::strcmp(env, "scalar") == 0) want_avx2 = false;
    else if (std::strcmp(env, "avx2") == 0 && !avx2_supported()) want_avx2 = false;
  }
  if (want_avx2) return Backend::avx2;
#else
  (void)env;
#endif
  return Backend::scalar;
}

}  // namespace

Backend active() {
  static const Backend be = resolve_backend();
  return be;
}

const char* backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

bool avx2_compiled() {
#ifdef WAVEDG_HAVE_AVX2
  return true;
#else
  return false;
#endif
}

bool avx2_supported() {
#if defined(WAVEDG_HAVE_AVX2) && defined(__GNUC__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

#ifdef WAVEDG_HAVE_AVX2
#define WAVEDG_DISPATCH(fn, ...)                         \
  do {                                                   \
    if (active() == Backend::avx2) {                     \
      avx2::fn(__VA_ARGS__);                             \
      return;                                            \
    }                                                    \
    scalar::fn(__VA_ARGS__);                             \
  } while (0)
#define WAVEDG_DISPATCH_RET(fn, ...)                     \
  do {                                                   \
    if (active() == Backend::avx2) return avx2::fn(__VA_ARGS__); \
    return scalar::fn(__VA_ARGS__);                      \
  } while (0)
#else
#define WAVEDG_DISPATCH(fn, ...)     \
  do {                               \
    scalar::fn(__VA_ARGS__);         \
    return;                          \
  } while (0)
#define WAVEDG_DISPATCH_RET(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

void add(const double* a, const double* b, double* out, std::size_t n) { WAVEDG_DISPATCH(add, a, b, out, n); }
void sub(const double* a, const double* b, double* out, std::size_t n) { WAVEDG_DISPATCH(sub, a, b, out, n); }
void mul(const double* a, const double* b, double* out, std::size_t n) { WAVEDG_DISPATCH(mul, a, b, out, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { WAVEDG_DISPATCH(axpy, alpha, x, y, n); }
void scale(double alpha, double* x, std::size_t n) { WAVEDG_DISPATCH(scale, alpha, x, n); }
void relu(const double* x, double* out, std::size_t n) { WAVEDG_DISPATCH(relu, x, out, n); }
void relu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
  WAVEDG_DISPATCH(relu_backward, x, dy, dx, n);
}
double dot(const double* a, const double* b, std::size_t n) { WAVEDG_DISPATCH_RET(dot, a, b, n); }
double sum(const double* x, std::size_t n) { WAVEDG_DISPATCH_RET(sum, x, n); }
void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  WAVEDG_DISPATCH(gemm, m, n, k, a, b, c, accumulate);
}

#undef WAVEDG_DISPATCH
#undef WAVEDG_DISPATCH_RET

}  // namespace wavedg::kernels
