// NEON backend for aarch64, 2 doubles per vector. Mirrors the AVX2 loop
// structure with narrower tiles.

#if defined(__aarch64__) && defined(__ARM_NEON)

#include "uld/kernels.hpp"

#include <arm_neon.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace uld::kern {
namespace {

void axpy_v(double a, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void scale_v(double a, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_f64(va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] = a * x[i];
}

void add_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void min_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vminq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = std::min(a[i], b[i]);
}

double dot_v(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    for (; i + 2 <= n; i += 2) acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) acc = std::fma(a[i], b[i], acc);
    return acc;
}

double sum_v(const double* x, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vaddq_f64(acc0, vld1q_f64(x + i));
        acc1 = vaddq_f64(acc1, vld1q_f64(x + i + 2));
    }
    for (; i + 2 <= n; i += 2) acc0 = vaddq_f64(acc0, vld1q_f64(x + i));
    double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) acc += x[i];
    return acc;
}

constexpr std::size_t kChunk = 512;

void matmul_v(const double* A, const double* B, double* C,
              std::size_t m, std::size_t k, std::size_t n) {
    std::memset(C, 0, m * n * sizeof(double));
    for (std::size_t k0 = 0; k0 < k; k0 += kChunk) {
        const std::size_t kEnd = std::min(k, k0 + kChunk);
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            for (std::size_t i = 0; i < m; ++i) {
                const double* a0 = A + i * k;
                double* c0 = C + i * n + j;
                float64x2_t s0 = vld1q_f64(c0 + 0), s1 = vld1q_f64(c0 + 2);
                float64x2_t s2 = vld1q_f64(c0 + 4), s3 = vld1q_f64(c0 + 6);
                for (std::size_t p = k0; p < kEnd; ++p) {
                    const double* b = B + p * n + j;
                    const float64x2_t va = vdupq_n_f64(a0[p]);
                    s0 = vfmaq_f64(s0, va, vld1q_f64(b + 0));
                    s1 = vfmaq_f64(s1, va, vld1q_f64(b + 2));
                    s2 = vfmaq_f64(s2, va, vld1q_f64(b + 4));
                    s3 = vfmaq_f64(s3, va, vld1q_f64(b + 6));
                }
                vst1q_f64(c0 + 0, s0);
                vst1q_f64(c0 + 2, s1);
                vst1q_f64(c0 + 4, s2);
                vst1q_f64(c0 + 6, s3);
            }
        }
        for (; j < n; ++j) {
            for (std::size_t i = 0; i < m; ++i) {
                double acc = C[i * n + j];
                const double* a0 = A + i * k;
                for (std::size_t p = k0; p < kEnd; ++p) acc = std::fma(a0[p], B[p * n + j], acc);
                C[i * n + j] = acc;
            }
        }
    }
}

void matmul_nt_v(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        const double* b = B + j * k;
        for (std::size_t i = 0; i < m; ++i) C[i * n + j] = dot_v(A + i * k, b, k);
    }
}

void matmul_tn_v(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
        for (std::size_t i = 0; i < m; ++i) {
            float64x2_t s0 = vdupq_n_f64(0.0), s1 = vdupq_n_f64(0.0);
            float64x2_t s2 = vdupq_n_f64(0.0), s3 = vdupq_n_f64(0.0);
            for (std::size_t p = 0; p < k; ++p) {
                const double* b = B + p * n + j;
                const float64x2_t va = vdupq_n_f64(A[p * m + i]);
                s0 = vfmaq_f64(s0, va, vld1q_f64(b + 0));
                s1 = vfmaq_f64(s1, va, vld1q_f64(b + 2));
                s2 = vfmaq_f64(s2, va, vld1q_f64(b + 4));
                s3 = vfmaq_f64(s3, va, vld1q_f64(b + 6));
            }
            double* c = C + i * n + j;
            vst1q_f64(c + 0, s0);
            vst1q_f64(c + 2, s1);
            vst1q_f64(c + 4, s2);
            vst1q_f64(c + 6, s3);
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

const Kernels* neon_kernels_impl() {
    static const Kernels k = {
        "neon", axpy_v,   scale_v, add_v, sub_v,       mul_v,
        min_v,  dot_v,    sum_v,   matmul_v, matmul_nt_v, matmul_tn_v,
    };
    return &k;
}

}  // namespace uld::kern

#endif  // aarch64 && NEON
