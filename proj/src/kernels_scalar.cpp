#include "uld/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

// Reference backend. Elementwise ops use std::fma so that per-element results
// are bit-identical to the FMA-based SIMD variants; reductions and matmuls
// keep a fixed left-to-right order and are compared against SIMD within a
// tolerance instead.

namespace uld::kern {
namespace {

void axpy_s(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void scale_s(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a * x[i];
}

void add_s(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_s(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_s(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void min_s(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::min(a[i], b[i]);
}

double dot_s(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc = std::fma(a[i], b[i], acc);
    return acc;
}

double sum_s(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

void matmul_s(const double* A, const double* B, double* C,
              std::size_t m, std::size_t k, std::size_t n) {
    std::memset(C, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        const double* a = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double ap = a[p];
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] = std::fma(ap, b[j], c[j]);
        }
    }
}

void matmul_nt_s(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (std::size_t j = 0; j < n; ++j) c[j] = dot_s(a, B + j * k, k);
    }
}

void matmul_tn_s(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n) {
    std::memset(C, 0, m * n * sizeof(double));
    for (std::size_t p = 0; p < k; ++p) {
        const double* a = A + p * m;
        const double* b = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double ai = a[i];
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c[j] = std::fma(ai, b[j], c[j]);
        }
    }
}

}  // namespace

const Kernels& scalar_kernels() {
    static const Kernels k = {
        "scalar", axpy_s,   scale_s, add_s, sub_s,       mul_s,
        min_s,    dot_s,    sum_s,   matmul_s, matmul_nt_s, matmul_tn_s,
    };
    return k;
}

}  // namespace uld::kern
