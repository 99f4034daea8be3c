// AVX2 + FMA backend, 4 doubles per vector. This translation unit is compiled
// with -mavx2 -mfma on x86-64; dispatch only hands it out when the CPU
// reports both features.

#if defined(__x86_64__) || defined(_M_X64)
#if defined(__AVX2__) && defined(__FMA__)

#include "uld/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace uld::kern {
namespace {

void axpy_v(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void scale_v(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = a * x[i];
}

void add_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void min_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_min_pd(_mm256_loadu_pd(b + i), _mm256_loadu_pd(a + i)));
    for (; i < n; ++i) out[i] = std::min(a[i], b[i]);
}

double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

double dot_v(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc = std::fma(a[i], b[i], acc);
    return acc;
}

double sum_v(const double* x, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
        acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i];
    return acc;
}

// C = A * B. Two A rows by one 16-column tile of B are accumulated in
// registers over a k-chunk; chunking keeps the live B panel inside L2.
constexpr std::size_t kChunk = 512;

void matmul_v(const double* A, const double* B, double* C,
              std::size_t m, std::size_t k, std::size_t n) {
    std::memset(C, 0, m * n * sizeof(double));
    for (std::size_t k0 = 0; k0 < k; k0 += kChunk) {
        const std::size_t kEnd = std::min(k, k0 + kChunk);
        std::size_t j = 0;
        for (; j + 16 <= n; j += 16) {
            std::size_t i = 0;
            for (; i + 2 <= m; i += 2) {
                const double* a0 = A + i * k;
                const double* a1 = a0 + k;
                double* c0 = C + i * n + j;
                double* c1 = c0 + n;
                __m256d s00 = _mm256_loadu_pd(c0 + 0), s01 = _mm256_loadu_pd(c0 + 4);
                __m256d s02 = _mm256_loadu_pd(c0 + 8), s03 = _mm256_loadu_pd(c0 + 12);
                __m256d s10 = _mm256_loadu_pd(c1 + 0), s11 = _mm256_loadu_pd(c1 + 4);
                __m256d s12 = _mm256_loadu_pd(c1 + 8), s13 = _mm256_loadu_pd(c1 + 12);
                for (std::size_t p = k0; p < kEnd; ++p) {
                    const double* b = B + p * n + j;
                    const __m256d b0 = _mm256_loadu_pd(b + 0);
                    const __m256d b1 = _mm256_loadu_pd(b + 4);
                    const __m256d b2 = _mm256_loadu_pd(b + 8);
                    const __m256d b3 = _mm256_loadu_pd(b + 12);
                    const __m256d va0 = _mm256_set1_pd(a0[p]);
                    s00 = _mm256_fmadd_pd(va0, b0, s00);
                    s01 = _mm256_fmadd_pd(va0, b1, s01);
                    s02 = _mm256_fmadd_pd(va0, b2, s02);
                    s03 = _mm256_fmadd_pd(va0, b3, s03);
                    const __m256d va1 = _mm256_set1_pd(a1[p]);
                    s10 = _mm256_fmadd_pd(va1, b0, s10);
                    s11 = _mm256_fmadd_pd(va1, b1, s11);
                    s12 = _mm256_fmadd_pd(va1, b2, s12);
                    s13 = _mm256_fmadd_pd(va1, b3, s13);
                }
                _mm256_storeu_pd(c0 + 0, s00);
                _mm256_storeu_pd(c0 + 4, s01);
                _mm256_storeu_pd(c0 + 8, s02);
                _mm256_storeu_pd(c0 + 12, s03);
                _mm256_storeu_pd(c1 + 0, s10);
                _mm256_storeu_pd(c1 + 4, s11);
                _mm256_storeu_pd(c1 + 8, s12);
                _mm256_storeu_pd(c1 + 12, s13);
            }
            for (; i < m; ++i) {
                const double* a0 = A + i * k;
                double* c0 = C + i * n + j;
                __m256d s00 = _mm256_loadu_pd(c0 + 0), s01 = _mm256_loadu_pd(c0 + 4);
                __m256d s02 = _mm256_loadu_pd(c0 + 8), s03 = _mm256_loadu_pd(c0 + 12);
                for (std::size_t p = k0; p < kEnd; ++p) {
                    const double* b = B + p * n + j;
                    const __m256d va0 = _mm256_set1_pd(a0[p]);
                    s00 = _mm256_fmadd_pd(va0, _mm256_loadu_pd(b + 0), s00);
                    s01 = _mm256_fmadd_pd(va0, _mm256_loadu_pd(b + 4), s01);
                    s02 = _mm256_fmadd_pd(va0, _mm256_loadu_pd(b + 8), s02);
                    s03 = _mm256_fmadd_pd(va0, _mm256_loadu_pd(b + 12), s03);
                }
                _mm256_storeu_pd(c0 + 0, s00);
                _mm256_storeu_pd(c0 + 4, s01);
                _mm256_storeu_pd(c0 + 8, s02);
                _mm256_storeu_pd(c0 + 12, s03);
            }
        }
        // Column remainder, one vector (or scalar tail) at a time.
        for (; j < n; j += 4) {
            const std::size_t width = std::min<std::size_t>(4, n - j);
            for (std::size_t i = 0; i < m; ++i) {
                const double* a0 = A + i * k;
                double* c0 = C + i * n + j;
                if (width == 4) {
                    __m256d s = _mm256_loadu_pd(c0);
                    for (std::size_t p = k0; p < kEnd; ++p)
                        s = _mm256_fmadd_pd(_mm256_set1_pd(a0[p]), _mm256_loadu_pd(B + p * n + j), s);
                    _mm256_storeu_pd(c0, s);
                } else {
                    for (std::size_t p = k0; p < kEnd; ++p) {
                        const double ap = a0[p];
                        const double* b = B + p * n + j;
                        for (std::size_t q = 0; q < width; ++q) c0[q] = std::fma(ap, b[q], c0[q]);
                    }
                }
            }
        }
    }
}

// B rows are the outer loop so each is streamed once while the (smaller) A
// panel stays cached; two A rows share every B load.
void matmul_nt_v(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        const double* b = B + j * k;
        std::size_t i = 0;
        for (; i + 2 <= m; i += 2) {
            const double* a0 = A + i * k;
            const double* a1 = a0 + k;
            __m256d s0 = _mm256_setzero_pd();
            __m256d s1 = _mm256_setzero_pd();
            std::size_t p = 0;
            for (; p + 4 <= k; p += 4) {
                const __m256d vb = _mm256_loadu_pd(b + p);
                s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a0 + p), vb, s0);
                s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a1 + p), vb, s1);
            }
            double d0 = hsum(s0);
            double d1 = hsum(s1);
            for (; p < k; ++p) {
                d0 = std::fma(a0[p], b[p], d0);
                d1 = std::fma(a1[p], b[p], d1);
            }
            C[i * n + j] = d0;
            C[(i + 1) * n + j] = d1;
        }
        for (; i < m; ++i) C[i * n + j] = dot_v(A + i * k, b, k);
    }
}

void matmul_tn_v(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n) {
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
        for (std::size_t i = 0; i < m; ++i) {
            __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
            __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
            for (std::size_t p = 0; p < k; ++p) {
                const double* b = B + p * n + j;
                const __m256d va = _mm256_set1_pd(A[p * m + i]);
                s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + 0), s0);
                s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + 4), s1);
                s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + 8), s2);
                s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + 12), s3);
            }
            double* c = C + i * n + j;
            _mm256_storeu_pd(c + 0, s0);
            _mm256_storeu_pd(c + 4, s1);
            _mm256_storeu_pd(c + 8, s2);
            _mm256_storeu_pd(c + 12, s3);
        }
    }
    for (; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc = std::fma(A[p * m + i], B[p * n + j], acc);
            C[i * n + j] = acc;
        }
    }
}

}  // namespace

const Kernels* avx2_kernels_impl() {
    static const Kernels k = {
        "avx2", axpy_v,   scale_v, add_v, sub_v,       mul_v,
        min_v,  dot_v,    sum_v,   matmul_v, matmul_nt_v, matmul_tn_v,
    };
    return &k;
}

}  // namespace uld::kern

#endif  // __AVX2__ && __FMA__
#endif  // x86-64
