#pragma once

#include <cstddef>
#include <string_view>

// Hot arithmetic loops used by the tensor engine. Every entry point has a
// scalar reference implementation plus SIMD variants (AVX2 on x86-64, NEON on
// aarch64) compiled into the same binary and selected once at startup based
// on what the CPU reports. The active backend can be forced with the
// ULD_KERNELS environment variable ("scalar", "avx2", "neon") or
// set_active(); SIMD variants are equivalence-tested against the scalar
// reference.
//
// Matrix layout is row-major throughout. Reduction order is fixed per
// backend, so results are reproducible for a given backend choice.

namespace uld::kern {

struct Kernels {
    const char* name;

    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // y[i] = a * x[i]
    void (*scale)(double a, const double* x, double* y, std::size_t n);
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    void (*min)(const double* a, const double* b, double* out, std::size_t n);
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* x, std::size_t n);

    // C[m x n] = A[m x k] * B[k x n]
    void (*matmul)(const double* A, const double* B, double* C,
                   std::size_t m, std::size_t k, std::size_t n);
    // C[m x n] = A[m x k] * B[n x k]^T
    void (*matmul_nt)(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t k, std::size_t n);
    // C[m x n] = A[k x m]^T * B[k x n]
    void (*matmul_tn)(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t k, std::size_t n);
};

const Kernels& scalar_kernels();

// Backend chosen for this machine (honors ULD_KERNELS on first call).
const Kernels& active();

// Force a backend by name; throws std::invalid_argument for unknown names
// and NumericError if the CPU cannot run it. Returns the previous backend.
const Kernels& set_active(std::string_view name);

// nullptr when the variant is not compiled in or the CPU lacks support.
const Kernels* find(std::string_view name);

}  // namespace uld::kern
