#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "uld/kernels.hpp"

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = (static_cast<double>(rng()) / static_cast<double>(UINT64_MAX)) * 4.0 - 2.0;
    return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double rel_tol_for(const std::vector<double>& ref) {
    double m = 1.0;
    for (double x : ref) m = std::max(m, std::abs(x));
    return 1e-12 * m;
}

}  // namespace

TEST_CASE("dispatch exposes a usable backend") {
    const auto& k = uld::kern::active();
    CHECK(k.name != nullptr);
    CHECK(uld::kern::find("scalar") != nullptr);
    CHECK(uld::kern::find("definitely-not-a-backend") == nullptr);
}

TEST_CASE("simd backends match the scalar reference") {
    const auto& ref = uld::kern::scalar_kernels();
    const uld::kern::Kernels* variants[] = {uld::kern::find("avx2"), uld::kern::find("neon")};

    for (const auto* k : variants) {
        if (!k) continue;
        CAPTURE(k->name);

        // elementwise: identical rounding (same single fma/add/mul per lane)
        for (std::size_t n : {1u, 3u, 7u, 64u, 1001u}) {
            auto a = random_vec(n, 11 + static_cast<unsigned>(n));
            auto b = random_vec(n, 29 + static_cast<unsigned>(n));
            std::vector<double> r1(n), r2(n);

            ref.add(a.data(), b.data(), r1.data(), n);
            k->add(a.data(), b.data(), r2.data(), n);
            CHECK(max_abs_diff(r1, r2) == 0.0);

            ref.sub(a.data(), b.data(), r1.data(), n);
            k->sub(a.data(), b.data(), r2.data(), n);
            CHECK(max_abs_diff(r1, r2) == 0.0);

            ref.mul(a.data(), b.data(), r1.data(), n);
            k->mul(a.data(), b.data(), r2.data(), n);
            CHECK(max_abs_diff(r1, r2) == 0.0);

            ref.min(a.data(), b.data(), r1.data(), n);
            k->min(a.data(), b.data(), r2.data(), n);
            CHECK(max_abs_diff(r1, r2) == 0.0);

            ref.scale(1.7, a.data(), r1.data(), n);
            k->scale(1.7, a.data(), r2.data(), n);
            CHECK(max_abs_diff(r1, r2) == 0.0);

            r1 = b;
            r2 = b;
            ref.axpy(-0.37, a.data(), r1.data(), n);
            k->axpy(-0.37, a.data(), r2.data(), n);
            CHECK(max_abs_diff(r1, r2) == 0.0);

            // reductions: order differs, compare within tolerance
            CHECK(std::abs(ref.dot(a.data(), b.data(), n) - k->dot(a.data(), b.data(), n)) <=
                  1e-12 * n);
            CHECK(std::abs(ref.sum(a.data(), n) - k->sum(a.data(), n)) <= 1e-12 * n);
        }

        // matmuls over shapes hitting tile edges and remainders
        const int shapes[][3] = {{1, 1, 1},   {2, 3, 4},    {5, 7, 17},  {16, 16, 16},
                                 {33, 9, 31}, {64, 128, 48}, {3, 600, 19}, {30, 11, 70}};
        for (const auto& s : shapes) {
            const std::size_t m = s[0], kk = s[1], n = s[2];
            auto A = random_vec(m * kk, 101 + static_cast<unsigned>(m * kk));
            auto B = random_vec(kk * n, 202 + static_cast<unsigned>(kk * n));
            auto Bt = random_vec(n * kk, 303 + static_cast<unsigned>(kk * n));
            auto At = random_vec(kk * m, 404 + static_cast<unsigned>(kk * m));
            std::vector<double> C1(m * n), C2(m * n);

            ref.matmul(A.data(), B.data(), C1.data(), m, kk, n);
            k->matmul(A.data(), B.data(), C2.data(), m, kk, n);
            CHECK(max_abs_diff(C1, C2) <= rel_tol_for(C1) * static_cast<double>(kk));

            ref.matmul_nt(A.data(), Bt.data(), C1.data(), m, kk, n);
            k->matmul_nt(A.data(), Bt.data(), C2.data(), m, kk, n);
            CHECK(max_abs_diff(C1, C2) <= rel_tol_for(C1) * static_cast<double>(kk));

            ref.matmul_tn(At.data(), B.data(), C1.data(), m, kk, n);
            k->matmul_tn(At.data(), B.data(), C2.data(), m, kk, n);
            CHECK(max_abs_diff(C1, C2) <= rel_tol_for(C1) * static_cast<double>(kk));
        }
    }
}

TEST_CASE("matmul against a hand example") {
    // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
    const double A[] = {1, 2, 3, 4};
    const double B[] = {5, 6, 7, 8};
    double C[4];
    uld::kern::active().matmul(A, B, C, 2, 2, 2);
    CHECK(C[0] == 19.0);
    CHECK(C[1] == 22.0);
    CHECK(C[2] == 43.0);
    CHECK(C[3] == 50.0);
}

TEST_CASE("set_active round trip") {
    const auto& before = uld::kern::active();
    uld::kern::set_active("scalar");
    CHECK(std::string(uld::kern::active().name) == "scalar");
    CHECK_THROWS_AS(uld::kern::set_active("bogus"), std::invalid_argument);
    uld::kern::set_active(before.name);
    CHECK(std::string(uld::kern::active().name) == before.name);
}
