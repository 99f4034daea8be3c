#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "uld/error.hpp"
#include "uld/tensor.hpp"

using uld::GradientTape;
using uld::Shape;
using uld::Tensor;

namespace {

// uniform in [-2,-0.1] u [0.1,2]: keeps points away from relu/min kinks
Tensor random_tensor(Shape shape, unsigned seed, bool positive = false) {
    std::mt19937_64 rng(seed);
    std::vector<double> v(uld::shape_numel(shape));
    for (double& x : v) {
        const double u = static_cast<double>(rng()) / static_cast<double>(UINT64_MAX);
        double mag = 0.1 + 1.9 * u;
        if (!positive && (rng() & 1)) mag = -mag;
        x = mag;
    }
    return Tensor::from_data(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("tensor basics and invariants") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.dim(0) == 2);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0}), uld::ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), uld::ShapeError);
    CHECK_THROWS_AS(t.item(), uld::ShapeError);
    CHECK(Tensor::scalar(4.5).item() == 4.5);
}

TEST_CASE("conv2d identity kernel keeps a map of ones") {
    GradientTape tp(false);
    Tensor x = Tensor::full({1, 3, 3}, 1.0);
    Tensor k = Tensor::full({1, 1, 1, 1}, 1.0);
    Tensor y = tp.conv2d(x, k, 1, 0);
    REQUIRE(y.shape() == Shape{1, 3, 3});
    for (double v : y.data()) CHECK(v == 1.0);
}

TEST_CASE("conv2d same-padding shape law") {
    GradientTape tp(false);
    Tensor x = random_tensor({1, 4, 4}, 5);
    Tensor k = random_tensor({1, 1, 3, 3}, 6);
    Tensor y = tp.conv2d(x, k, 1, 1);
    CHECK(y.shape() == Shape{1, 4, 4});
}

TEST_CASE("conv2d all-ones kernel sums the window") {
    GradientTape tp(false);
    Tensor x = Tensor::from_data({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = tp.conv2d(x, k, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1});
    CHECK(y.item() == doctest::Approx(45.0).epsilon(1e-14));
}

TEST_CASE("conv2d with a Dirac kernel is the identity") {
    GradientTape tp(false);
    for (int ks : {1, 3, 5}) {
        Tensor x = random_tensor({2, 6, 7}, 70 + static_cast<unsigned>(ks));
        std::vector<double> kd(static_cast<std::size_t>(2 * 2 * ks * ks), 0.0);
        // kernel[c][c][center][center] = 1
        for (int c = 0; c < 2; ++c)
            kd[((static_cast<std::size_t>(c) * 2 + c) * ks + ks / 2) * ks + ks / 2] = 1.0;
        Tensor k = Tensor::from_data({2, 2, ks, ks}, std::move(kd));
        Tensor y = tp.conv2d(x, k, 1, ks / 2);
        REQUIRE(y.shape() == x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-14));
    }
}

TEST_CASE("conv2d rejects mismatched channel counts") {
    GradientTape tp(false);
    Tensor x = Tensor::zeros({3, 4, 4});
    Tensor k = Tensor::zeros({1, 2, 3, 3});
    CHECK_THROWS_AS(tp.conv2d(x, k, 1, 1), uld::ShapeError);
    Tensor keven = Tensor::zeros({1, 3, 2, 2});
    CHECK_THROWS_AS(tp.conv2d(x, keven, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(tp.conv2d(x, Tensor::zeros({1, 3, 3, 3}), 0, 0), std::invalid_argument);
}

TEST_CASE("resize_bilinear identity is bitwise") {
    GradientTape tp(false);
    Tensor x = random_tensor({3, 5, 4}, 9);
    Tensor y = tp.resize_bilinear(x, 5, 4);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("resize_bilinear extends a constant") {
    GradientTape tp(false);
    Tensor x = Tensor::full({1, 1, 1}, 0.37);
    Tensor y = tp.resize_bilinear(x, 4, 4);
    REQUIRE(y.shape() == Shape{1, 4, 4});
    for (double v : y.data()) CHECK(v == 0.37);
}

TEST_CASE("resize_bilinear matches the hand-evaluated 2x2 -> 2x4 row") {
    GradientTape tp(false);
    Tensor x = Tensor::from_data({1, 2, 2}, {0, 1, 0, 1});
    Tensor y = tp.resize_bilinear(x, 2, 4);
    REQUIRE(y.shape() == Shape{1, 2, 4});
    const double expect[] = {0.0, 0.25, 0.75, 1.0};
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c)
            CHECK(y.data()[static_cast<std::size_t>(r) * 4 + c] == doctest::Approx(expect[c]).epsilon(1e-14));
}

TEST_CASE("gradient_check on linear and quadratic functions") {
    auto fsum = [](GradientTape& tp, const Tensor& x) { return tp.sum(x); };
    Tensor p = random_tensor({2, 3}, 42);
    auto res = uld::gradient_check(fsum, p, 1e-5);
    CHECK(res.max_rel_error <= 1e-9);
    CHECK(!res.non_finite);

    auto fsq = [](GradientTape& tp, const Tensor& x) { return tp.sum(tp.mul(x, x)); };
    Tensor p2 = Tensor::from_data({3}, {1, 2, 3});
    // analytic gradient is [2,4,6]
    {
        GradientTape tp;
        Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
        Tensor loss = tp.sum(tp.mul(x, x));
        tp.backward(loss);
        auto g = tp.grad(x);
        REQUIRE(g.size() == 3);
        CHECK(g[0] == doctest::Approx(2.0));
        CHECK(g[1] == doctest::Approx(4.0));
        CHECK(g[2] == doctest::Approx(6.0));
    }
    CHECK(uld::gradient_check(fsq, p2, 1e-5).max_rel_error <= 1e-7);
}

TEST_CASE("gradient_check flags non-finite values") {
    auto f = [](GradientTape& tp, const Tensor& x) { return tp.sum(tp.log(x)); };
    Tensor p = Tensor::from_data({2}, {1e-7, 1.0});  // log probe at x-step goes negative -> nan
    auto res = uld::gradient_check(f, p, 1e-5);
    CHECK(res.non_finite);
    CHECK(res.bad_coord == 0);
}

TEST_CASE("gradient_check rejects out-of-range steps") {
    auto f = [](GradientTape& tp, const Tensor& x) { return tp.sum(x); };
    CHECK_THROWS_AS(uld::gradient_check(f, Tensor::scalar(1.0), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(uld::gradient_check(f, Tensor::scalar(1.0), 0.1), std::invalid_argument);
}

// Every differentiable operation, checked against central differences at 3
// random points (step 1e-5, tolerance 1e-4).
TEST_CASE("gradient_check covers every tape operation") {
    struct Case {
        const char* name;
        Shape shape;
        bool positive;  // restrict the point to positive values
        uld::ScalarFn fn;
    };

    const Tensor c23 = random_tensor({2, 3}, 1001);
    const Tensor c34 = random_tensor({3, 4}, 1002);
    const Tensor c24 = random_tensor({2, 4}, 1003);
    const Tensor c43 = random_tensor({4, 3}, 1004);
    const Tensor cpos = random_tensor({2, 3}, 1005, true);
    const Tensor c13 = random_tensor({1, 3}, 1006);
    const Tensor convk = random_tensor({3, 2, 3, 3}, 1007);
    const Tensor convx = random_tensor({2, 5, 5}, 1008);
    const Tensor convb = random_tensor({3}, 1009);
    const Tensor cconv = random_tensor({3, 3, 3}, 1010);  // matches conv output 3x3x3 (5x5, pad1, stride2->3)
    const Tensor gamma = random_tensor({4}, 1011);
    const Tensor beta = random_tensor({4}, 1012);
    const Tensor cgn = random_tensor({4, 3, 2}, 1013);
    const Tensor cbig = random_tensor({2, 6, 5}, 1014);
    const Tensor cres = random_tensor({2, 3, 7}, 1015);

    const std::vector<Case> cases = {
        {"add", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.add(x, c23)); }},
        {"sub", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.sub(c23, x)); }},
        {"mul", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(x, c23)); }},
        {"div_num", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.div(x, cpos)); }},
        {"div_den", {2, 3}, true, [&](GradientTape& t, const Tensor& x) { return t.sum(t.div(c23, x)); }},
        {"minimum", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.minimum(x, c23)); }},
        {"minimum_rhs", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.minimum(c23, x)); }},
        {"add_scalar", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.add_scalar(x, 0.7)); }},
        {"mul_scalar", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul_scalar(x, -1.3)); }},
        {"mul_scalar_t_lhs", {2, 3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul_scalar_t(x, Tensor::scalar(1.4))); }},
        {"mul_scalar_t_rhs", {1}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul_scalar_t(c23, x)); }},
        {"neg", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.neg(x)); }},
        {"relu", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.relu(x), c23)); }},
        {"exp", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.exp(x), c23)); }},
        {"log", {2, 3}, true, [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.log(x), c23)); }},
        {"sigmoid", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.sigmoid(x), c23)); }},
        {"softplus", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.softplus(x), c23)); }},
        {"sum", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.sum(x); }},
        {"mean", {2, 3}, false, [&](GradientTape& t, const Tensor& x) { return t.mean(t.mul(x, x)); }},
        {"sum_rows", {2, 3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.sum_rows(x), c13)); }},
        {"matmul_lhs", {2, 3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.matmul(x, c34), c24)); }},
        {"matmul_rhs", {3, 4}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.matmul(c23, x), c24)); }},
        {"transpose", {3, 4}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.transpose(x), c43)); }},
        {"softmax_rows", {2, 3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.softmax_rows(x), c23)); }},
        {"softmax_cols", {2, 3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.softmax_cols(x), c23)); }},
        {"mul_rowvec_lhs", {2, 3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul_rowvec(x, c13)); }},
        {"mul_rowvec_rhs", {1, 3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul_rowvec(c23, x)); }},
        {"reshape", {2, 3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.reshape(x, {3, 2}), t.reshape(c23, {3, 2}))); }},
        {"concat0", {2, 3}, false,
         [&](GradientTape& t, const Tensor& x) {
             const Tensor parts[] = {x, c23};
             const Tensor wparts[] = {c23, c23};
             return t.sum(t.mul(t.concat0(parts), t.concat0(wparts)));
         }},
        {"slice_rows", {4, 3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.slice_rows(x, 1, 3), c23)); }},
        {"gather_cols", {2, 4}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.gather_cols(x, {0, 2, 2}), t.gather_cols(c24, {1, 2, 3}))); }},
        {"conv2d_input", {2, 5, 5}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.conv2d(x, convk, convb, 2, 1), cconv)); }},
        {"conv2d_kernel", {3, 2, 3, 3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.conv2d(convx, x, convb, 2, 1), cconv)); }},
        {"conv2d_bias", {3}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.conv2d(convx, convk, x, 2, 1), cconv)); }},
        {"resize_up", {2, 3, 4}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.resize_bilinear(x, 6, 5), cbig)); }},
        {"resize_down", {2, 6, 5}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.resize_bilinear(x, 3, 7), cres)); }},
        {"group_norm_input", {4, 3, 2}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.group_norm(x, gamma, beta, 2), cgn)); }},
        {"group_norm_gamma", {4}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.group_norm(cgn, x, beta, 2), cgn)); }},
        {"group_norm_beta", {4}, false,
         [&](GradientTape& t, const Tensor& x) { return t.sum(t.mul(t.group_norm(cgn, gamma, x, 2), cgn)); }},
    };

    for (const Case& c : cases) {
        CAPTURE(c.name);
        for (unsigned seed = 1; seed <= 3; ++seed) {
            Tensor point = random_tensor(c.shape, seed * 7919 + 13, c.positive);
            auto res = uld::gradient_check(c.fn, point, 1e-5);
            CAPTURE(seed);
            CAPTURE(res.worst_coord);
            CHECK(!res.non_finite);
            CHECK(res.max_rel_error <= 1e-4);
        }
    }
}

TEST_CASE("tape is linear: backward of a sum equals sum of backwards") {
    Tensor x = random_tensor({3, 3}, 77);

    auto run = [&](int which) {
        GradientTape tp;
        Tensor xx = Tensor::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
        Tensor a = tp.sum(tp.mul(xx, xx));     // graph 1
        Tensor b = tp.sum(tp.sigmoid(xx));     // graph 2
        Tensor loss = which == 0 ? a : (which == 1 ? b : tp.add(a, b));
        tp.backward(loss);
        auto g = tp.grad(xx);
        return std::vector<double>(g.begin(), g.end());
    };

    auto g1 = run(0);
    auto g2 = run(1);
    auto g12 = run(2);
    REQUIRE(g1.size() == x.size());
    REQUIRE(g12.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
}

TEST_CASE("gradients match tensor shapes and unreached tensors have none") {
    GradientTape tp;
    Tensor x = random_tensor({2, 5}, 31);
    Tensor xx = Tensor::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
    Tensor unused = Tensor::from_data({3}, {1, 2, 3}, true);
    Tensor loss = tp.sum(tp.mul(xx, xx));
    tp.backward(loss);
    CHECK(tp.grad(xx).size() == xx.size());
    CHECK(tp.grad(unused).empty());
}

TEST_CASE("backward demands a scalar loss and a recording tape") {
    GradientTape off(false);
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = off.add(x, x);
    CHECK(!y.requires_grad());  // nothing recorded
    CHECK_THROWS_AS(off.backward(y), std::logic_error);

    GradientTape on;
    Tensor z = on.add(x, x);
    CHECK_THROWS_AS(on.backward(z), uld::ShapeError);
}
