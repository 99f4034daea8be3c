#include "uld/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "uld/error.hpp"
#include "uld/kernels.hpp"

namespace uld {

namespace {

void check(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// dst += src
void accumulate(std::vector<double>& dst, std::span<const double> src) {
    kern::active().add(dst.data(), src.data(), dst.data(), dst.size());
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

namespace {
std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, bool requires_grad) {
    for (int d : shape) {
        if (d < 1) throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->requires_grad = requires_grad;
    impl->data.resize(shape_numel(shape));
    impl->shape = std::move(shape);
    return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(make_impl(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t(make_impl(std::move(shape), requires_grad));
    std::fill(t.impl()->data.begin(), t.impl()->data.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("from_data: " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->requires_grad = requires_grad;
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    return impl_->data[0];
}

// ---------------------------------------------------------------------------
// GradientTape plumbing

std::vector<double>* GradientTape::find_grad(const detail::TensorImpl* t) {
    auto it = grads_.find(t);
    return it == grads_.end() ? nullptr : &it->second;
}

std::vector<double>& GradientTape::grad_buf(const Tensor& t) {
    auto [it, inserted] = grads_.try_emplace(t.impl());
    if (inserted) it->second.assign(t.size(), 0.0);
    return it->second;
}

void GradientTape::record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

void GradientTape::backward(const Tensor& loss) {
    if (!recording_) throw std::logic_error("backward() on a non-recording tape");
    if (ran_backward_) throw std::logic_error("backward() already ran on this tape");
    if (loss.size() != 1) throw ShapeError("backward: loss must be a single element");
    ran_backward_ = true;
    grad_buf(loss)[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

std::span<const double> GradientTape::grad(const Tensor& t) const {
    auto it = grads_.find(t.impl());
    if (it == grads_.end()) return {};
    return it->second;
}

namespace {
// Shared between the op implementations: marks the output differentiable and
// queues the node when the tape is live.
struct Recorder {
    GradientTape* tape;
    bool needed;
};
}  // namespace

class TapeOps {
  public:
    static Recorder begin(GradientTape& tape, std::initializer_list<const Tensor*> inputs) {
        bool any = false;
        for (const Tensor* t : inputs) any = any || t->requires_grad();
        return {&tape, tape.recording_ && any};
    }
    static void finish(const Recorder& r, Tensor& out, std::function<void()> backward) {
        if (!r.needed) return;
        out.impl()->requires_grad = true;
        r.tape->record(std::move(backward));
    }
    static std::vector<double>* out_grad(GradientTape* tape, const Tensor& out) {
        return tape->find_grad(out.impl());
    }
    static std::vector<double>& in_grad(GradientTape* tape, const Tensor& in) {
        return tape->grad_buf(in);
    }
};

namespace {
std::vector<double>* ogr(GradientTape* t, const Tensor& out) { return TapeOps::out_grad(t, out); }
std::vector<double>& igr(GradientTape* t, const Tensor& in) { return TapeOps::in_grad(t, in); }
}  // namespace

// ---------------------------------------------------------------------------
// elementwise binary

Tensor GradientTape::add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    kern::active().add(a.data().data(), b.data().data(), out.mutable_data().data(), a.size());
    auto r = TapeOps::begin(*this, {&a, &b});
    TapeOps::finish(r, out, [t = this, a, b, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        if (a.requires_grad()) accumulate(igr(t, a), *gy);
        if (b.requires_grad()) accumulate(igr(t, b), *gy);
    });
    return out;
}

Tensor GradientTape::sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    kern::active().sub(a.data().data(), b.data().data(), out.mutable_data().data(), a.size());
    auto r = TapeOps::begin(*this, {&a, &b});
    TapeOps::finish(r, out, [t = this, a, b, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        if (a.requires_grad()) accumulate(igr(t, a), *gy);
        if (b.requires_grad()) {
            auto& gb = igr(t, b);
            kern::active().axpy(-1.0, gy->data(), gb.data(), gb.size());
        }
    });
    return out;
}

Tensor GradientTape::mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    kern::active().mul(a.data().data(), b.data().data(), out.mutable_data().data(), a.size());
    auto r = TapeOps::begin(*this, {&a, &b});
    TapeOps::finish(r, out, [t = this, a, b, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        const std::size_t n = a.size();
        if (a.requires_grad()) {
            auto& ga = igr(t, a);
            const double* g = gy->data();
            const double* bv = b.data().data();
            for (std::size_t i = 0; i < n; ++i) ga[i] = std::fma(g[i], bv[i], ga[i]);
        }
        if (b.requires_grad()) {
            auto& gb = igr(t, b);
            const double* g = gy->data();
            const double* av = a.data().data();
            for (std::size_t i = 0; i < n; ++i) gb[i] = std::fma(g[i], av[i], gb[i]);
        }
    });
    return out;
}

Tensor GradientTape::div(const Tensor& a, const Tensor& b) {
    check_same_shape("div", a, b);
    Tensor out = Tensor::zeros(a.shape());
    {
        auto o = out.mutable_data();
        auto av = a.data();
        auto bv = b.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] / bv[i];
    }
    auto r = TapeOps::begin(*this, {&a, &b});
    TapeOps::finish(r, out, [t = this, a, b, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        const std::size_t n = a.size();
        const double* g = gy->data();
        const double* bv = b.data().data();
        if (a.requires_grad()) {
            auto& ga = igr(t, a);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / bv[i];
        }
        if (b.requires_grad()) {
            auto& gb = igr(t, b);
            const double* ov = out.data().data();
            for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * ov[i] / bv[i];
        }
    });
    return out;
}

// Ties route the gradient to the first argument.
Tensor GradientTape::minimum(const Tensor& a, const Tensor& b) {
    check_same_shape("minimum", a, b);
    Tensor out = Tensor::zeros(a.shape());
    kern::active().min(a.data().data(), b.data().data(), out.mutable_data().data(), a.size());
    auto r = TapeOps::begin(*this, {&a, &b});
    TapeOps::finish(r, out, [t = this, a, b, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        const std::size_t n = a.size();
        const double* g = gy->data();
        const double* av = a.data().data();
        const double* bv = b.data().data();
        if (a.requires_grad()) {
            auto& ga = igr(t, a);
            for (std::size_t i = 0; i < n; ++i)
                if (av[i] <= bv[i]) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = igr(t, b);
            for (std::size_t i = 0; i < n; ++i)
                if (bv[i] < av[i]) gb[i] += g[i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// scalar broadcast

Tensor GradientTape::add_scalar(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    {
        auto o = out.mutable_data();
        auto av = a.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + c;
    }
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        accumulate(igr(t, a), *gy);
    });
    return out;
}

Tensor GradientTape::mul_scalar(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    kern::active().scale(c, a.data().data(), out.mutable_data().data(), a.size());
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out, c] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        kern::active().axpy(c, gy->data(), ga.data(), ga.size());
    });
    return out;
}

Tensor GradientTape::mul_scalar_t(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("mul_scalar_t: scale must have exactly one element");
    Tensor out = Tensor::zeros(a.shape());
    kern::active().scale(s.data()[0], a.data().data(), out.mutable_data().data(), a.size());
    auto r = TapeOps::begin(*this, {&a, &s});
    TapeOps::finish(r, out, [t = this, a, s, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        if (a.requires_grad()) {
            auto& ga = igr(t, a);
            kern::active().axpy(s.data()[0], gy->data(), ga.data(), ga.size());
        }
        if (s.requires_grad()) {
            igr(t, s)[0] += kern::active().dot(gy->data(), a.data().data(), a.size());
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// elementwise unary

Tensor GradientTape::neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor GradientTape::relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    {
        auto o = out.mutable_data();
        auto av = a.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] > 0.0 ? av[i] : 0.0;
    }
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        const double* g = gy->data();
        const double* av = a.data().data();
        for (std::size_t i = 0; i < ga.size(); ++i)
            if (av[i] > 0.0) ga[i] += g[i];
    });
    return out;
}

Tensor GradientTape::exp(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    {
        auto o = out.mutable_data();
        auto av = a.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(av[i]);
    }
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        const double* g = gy->data();
        const double* ov = out.data().data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = std::fma(g[i], ov[i], ga[i]);
    });
    return out;
}

Tensor GradientTape::log(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    {
        auto o = out.mutable_data();
        auto av = a.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(av[i]);
    }
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        const double* g = gy->data();
        const double* av = a.data().data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / av[i];
    });
    return out;
}

Tensor GradientTape::sigmoid(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    {
        auto o = out.mutable_data();
        auto av = a.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_sigmoid(av[i]);
    }
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        const double* g = gy->data();
        const double* ov = out.data().data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * ov[i] * (1.0 - ov[i]);
    });
    return out;
}

Tensor GradientTape::softplus(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    {
        auto o = out.mutable_data();
        auto av = a.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_softplus(av[i]);
    }
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        const double* g = gy->data();
        const double* av = a.data().data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * stable_sigmoid(av[i]);
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions

Tensor GradientTape::sum(const Tensor& a) {
    Tensor out = Tensor::scalar(kern::active().sum(a.data().data(), a.size()));
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        const double g = (*gy)[0];
        for (double& v : ga) v += g;
    });
    return out;
}

Tensor GradientTape::mean(const Tensor& a) {
    return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor GradientTape::sum_rows(const Tensor& a) {
    check(a.rank() == 2, "sum_rows: expects a 2-D tensor");
    const int rows = a.dim(0), cols = a.dim(1);
    Tensor out = Tensor::zeros({1, cols});
    {
        auto o = out.mutable_data();
        const double* av = a.data().data();
        for (int rI = 0; rI < rows; ++rI) {
            kern::active().add(o.data(), av + static_cast<std::size_t>(rI) * cols, o.data(), cols);
        }
    }
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out, rows, cols] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        for (int rI = 0; rI < rows; ++rI) {
            kern::active().add(ga.data() + static_cast<std::size_t>(rI) * cols, gy->data(),
                               ga.data() + static_cast<std::size_t>(rI) * cols, cols);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// 2-D linear algebra

Tensor GradientTape::matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: expects 2-D tensors");
    check(a.dim(1) == b.dim(0), "matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const std::size_t m = static_cast<std::size_t>(a.dim(0));
    const std::size_t k = static_cast<std::size_t>(a.dim(1));
    const std::size_t n = static_cast<std::size_t>(b.dim(1));
    Tensor out = Tensor::zeros({a.dim(0), b.dim(1)});
    kern::active().matmul(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
    auto r = TapeOps::begin(*this, {&a, &b});
    TapeOps::finish(r, out, [t = this, a, b, out, m, k, n] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        if (a.requires_grad()) {
            std::vector<double> tmp(m * k);
            kern::active().matmul_nt(gy->data(), b.data().data(), tmp.data(), m, n, k);
            accumulate(igr(t, a), tmp);
        }
        if (b.requires_grad()) {
            std::vector<double> tmp(k * n);
            kern::active().matmul_tn(a.data().data(), gy->data(), tmp.data(), k, m, n);
            accumulate(igr(t, b), tmp);
        }
    });
    return out;
}

namespace {
void transpose_into(const double* src, double* dst, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            dst[static_cast<std::size_t>(j) * rows + i] = src[static_cast<std::size_t>(i) * cols + j];
}
}  // namespace

Tensor GradientTape::transpose(const Tensor& a) {
    check(a.rank() == 2, "transpose: expects a 2-D tensor");
    const int rows = a.dim(0), cols = a.dim(1);
    Tensor out = Tensor::zeros({cols, rows});
    transpose_into(a.data().data(), out.mutable_data().data(), rows, cols);
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out, rows, cols] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        std::vector<double> tmp(a.size());
        transpose_into(gy->data(), tmp.data(), cols, rows);
        accumulate(igr(t, a), tmp);
    });
    return out;
}

Tensor GradientTape::softmax_rows(const Tensor& a) {
    check(a.rank() == 2, "softmax_rows: expects a 2-D tensor");
    const int rows = a.dim(0), cols = a.dim(1);
    Tensor out = Tensor::zeros(a.shape());
    {
        auto o = out.mutable_data();
        const double* av = a.data().data();
        for (int rI = 0; rI < rows; ++rI) {
            const double* x = av + static_cast<std::size_t>(rI) * cols;
            double* y = o.data() + static_cast<std::size_t>(rI) * cols;
            double mx = x[0];
            for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
            double z = 0.0;
            for (int j = 0; j < cols; ++j) {
                y[j] = std::exp(x[j] - mx);
                z += y[j];
            }
            const double inv = 1.0 / z;
            for (int j = 0; j < cols; ++j) y[j] *= inv;
        }
    }
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out, rows, cols] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        const double* yv = out.data().data();
        for (int rI = 0; rI < rows; ++rI) {
            const std::size_t off = static_cast<std::size_t>(rI) * cols;
            const double* y = yv + off;
            const double* g = gy->data() + off;
            const double d = kern::active().dot(g, y, cols);
            for (int j = 0; j < cols; ++j) ga[off + j] += y[j] * (g[j] - d);
        }
    });
    return out;
}

Tensor GradientTape::softmax_cols(const Tensor& a) {
    return transpose(softmax_rows(transpose(a)));
}

Tensor GradientTape::mul_rowvec(const Tensor& a, const Tensor& v) {
    check(a.rank() == 2 && v.rank() == 2 && v.dim(0) == 1 && v.dim(1) == a.dim(1),
          "mul_rowvec: expects [R,C] and [1,C]");
    const int rows = a.dim(0), cols = a.dim(1);
    Tensor out = Tensor::zeros(a.shape());
    {
        auto o = out.mutable_data();
        const double* av = a.data().data();
        const double* vv = v.data().data();
        for (int rI = 0; rI < rows; ++rI)
            kern::active().mul(av + static_cast<std::size_t>(rI) * cols, vv,
                               o.data() + static_cast<std::size_t>(rI) * cols, cols);
    }
    auto r = TapeOps::begin(*this, {&a, &v});
    TapeOps::finish(r, out, [t = this, a, v, out, rows, cols] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        if (a.requires_grad()) {
            auto& ga = igr(t, a);
            const double* vv = v.data().data();
            for (int rI = 0; rI < rows; ++rI) {
                const std::size_t off = static_cast<std::size_t>(rI) * cols;
                for (int j = 0; j < cols; ++j) ga[off + j] += (*gy)[off + j] * vv[j];
            }
        }
        if (v.requires_grad()) {
            auto& gv = igr(t, v);
            const double* av = a.data().data();
            for (int rI = 0; rI < rows; ++rI) {
                const std::size_t off = static_cast<std::size_t>(rI) * cols;
                for (int j = 0; j < cols; ++j) gv[j] += (*gy)[off + j] * av[off + j];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// shape & assembly

Tensor GradientTape::reshape(const Tensor& a, Shape shape) {
    check(shape_numel(shape) == a.size(), "reshape: element count mismatch, " +
                                              shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor out = Tensor::from_data(std::move(shape),
                                   std::vector<double>(a.data().begin(), a.data().end()));
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        accumulate(igr(t, a), *gy);
    });
    return out;
}

Tensor GradientTape::concat0(std::span<const Tensor> parts) {
    check(!parts.empty(), "concat0: no inputs");
    const Shape& first = parts[0].shape();
    int total0 = 0;
    for (const Tensor& p : parts) {
        check(p.rank() == parts[0].rank(), "concat0: rank mismatch");
        for (int d = 1; d < p.rank(); ++d)
            check(p.dim(d) == parts[0].dim(d), "concat0: trailing dimension mismatch");
        total0 += p.dim(0);
    }
    Shape out_shape = first;
    out_shape[0] = total0;
    Tensor out = Tensor::zeros(out_shape);
    {
        auto o = out.mutable_data();
        std::size_t off = 0;
        for (const Tensor& p : parts) {
            std::memcpy(o.data() + off, p.data().data(), p.size() * sizeof(double));
            off += p.size();
        }
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || p.requires_grad();
    if (recording_ && any) {
        out.impl()->requires_grad = true;
        std::vector<Tensor> kept(parts.begin(), parts.end());
        record([t = this, kept = std::move(kept), out] {
            auto* gy = ogr(t, out);
            if (!gy) return;
            std::size_t off = 0;
            for (const Tensor& p : kept) {
                if (p.requires_grad()) {
                    auto& gp = igr(t, p);
                    kern::active().add(gp.data(), gy->data() + off, gp.data(), p.size());
                }
                off += p.size();
            }
        });
    }
    return out;
}

Tensor GradientTape::slice_rows(const Tensor& a, int begin, int end) {
    check(a.rank() == 2, "slice_rows: expects a 2-D tensor");
    check(begin >= 0 && end > begin && end <= a.dim(0), "slice_rows: bad row range");
    const int cols = a.dim(1);
    const int rows = end - begin;
    Tensor out = Tensor::zeros({rows, cols});
    std::memcpy(out.mutable_data().data(), a.data().data() + static_cast<std::size_t>(begin) * cols,
                static_cast<std::size_t>(rows) * cols * sizeof(double));
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out, begin, cols] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        double* dst = ga.data() + static_cast<std::size_t>(begin) * cols;
        kern::active().add(dst, gy->data(), dst, gy->size());
    });
    return out;
}

Tensor GradientTape::gather_cols(const Tensor& a, std::vector<int> cols_idx) {
    check(a.rank() == 2, "gather_cols: expects a 2-D tensor");
    check(!cols_idx.empty(), "gather_cols: empty index list");
    const int rows = a.dim(0), cols = a.dim(1);
    for (int c : cols_idx) check(c >= 0 && c < cols, "gather_cols: index out of range");
    const int P = static_cast<int>(cols_idx.size());
    Tensor out = Tensor::zeros({rows, P});
    {
        auto o = out.mutable_data();
        const double* av = a.data().data();
        for (int rI = 0; rI < rows; ++rI)
            for (int p = 0; p < P; ++p)
                o[static_cast<std::size_t>(rI) * P + p] =
                    av[static_cast<std::size_t>(rI) * cols + cols_idx[static_cast<std::size_t>(p)]];
    }
    auto r = TapeOps::begin(*this, {&a});
    TapeOps::finish(r, out, [t = this, a, out, idx = std::move(cols_idx), rows, cols] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& ga = igr(t, a);
        const int P = static_cast<int>(idx.size());
        for (int rI = 0; rI < rows; ++rI)
            for (int p = 0; p < P; ++p)
                ga[static_cast<std::size_t>(rI) * cols + idx[static_cast<std::size_t>(p)]] +=
                    (*gy)[static_cast<std::size_t>(rI) * P + p];
    });
    return out;
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvDims {
    int cin, h, w, cout, kh, kw, out_h, out_w;
    std::size_t K() const { return static_cast<std::size_t>(cin) * kh * kw; }
    std::size_t N() const { return static_cast<std::size_t>(out_h) * out_w; }
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride, int pad) {
    check(input.rank() == 3, "conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
    check(kernel.rank() == 4,
          "conv2d: kernel must be [Cout,Cin,kH,kW], got " + shape_str(kernel.shape()));
    if (kernel.dim(1) != input.dim(0)) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " input channels, image has " + std::to_string(input.dim(0)));
    }
    if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0)
        throw std::invalid_argument("conv2d: kernel extents must be odd");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
    ConvDims d{};
    d.cin = input.dim(0);
    d.h = input.dim(1);
    d.w = input.dim(2);
    d.cout = kernel.dim(0);
    d.kh = kernel.dim(2);
    d.kw = kernel.dim(3);
    d.out_h = (d.h + 2 * pad - d.kh) / stride + 1;
    d.out_w = (d.w + 2 * pad - d.kw) / stride + 1;
    check(d.out_h >= 1 && d.out_w >= 1, "conv2d: kernel larger than padded input");
    return d;
}

// cols is [Cin*kH*kW, outH*outW]; out-of-image taps are zero.
void im2col(const double* x, const ConvDims& d, int stride, int pad, double* cols) {
    const std::size_t N = d.N();
    for (int ci = 0; ci < d.cin; ++ci) {
        const double* xc = x + static_cast<std::size_t>(ci) * d.h * d.w;
        for (int u = 0; u < d.kh; ++u) {
            for (int v = 0; v < d.kw; ++v) {
                double* row = cols + (static_cast<std::size_t>(ci) * d.kh * d.kw +
                                      static_cast<std::size_t>(u) * d.kw + v) *
                                         N;
                for (int oy = 0; oy < d.out_h; ++oy) {
                    const int iy = oy * stride + u - pad;
                    double* dst = row + static_cast<std::size_t>(oy) * d.out_w;
                    if (iy < 0 || iy >= d.h) {
                        std::memset(dst, 0, static_cast<std::size_t>(d.out_w) * sizeof(double));
                        continue;
                    }
                    const double* src = xc + static_cast<std::size_t>(iy) * d.w;
                    for (int ox = 0; ox < d.out_w; ++ox) {
                        const int ix = ox * stride + v - pad;
                        dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// scatter-add of cols gradients back onto the image
void col2im_acc(const double* cols, const ConvDims& d, int stride, int pad, double* gx) {
    const std::size_t N = d.N();
    for (int ci = 0; ci < d.cin; ++ci) {
        double* xc = gx + static_cast<std::size_t>(ci) * d.h * d.w;
        for (int u = 0; u < d.kh; ++u) {
            for (int v = 0; v < d.kw; ++v) {
                const double* row = cols + (static_cast<std::size_t>(ci) * d.kh * d.kw +
                                            static_cast<std::size_t>(u) * d.kw + v) *
                                               N;
                for (int oy = 0; oy < d.out_h; ++oy) {
                    const int iy = oy * stride + u - pad;
                    if (iy < 0 || iy >= d.h) continue;
                    const double* src = row + static_cast<std::size_t>(oy) * d.out_w;
                    double* dst = xc + static_cast<std::size_t>(iy) * d.w;
                    for (int ox = 0; ox < d.out_w; ++ox) {
                        const int ix = ox * stride + v - pad;
                        if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor GradientTape::conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
    return conv2d(input, kernel, Tensor(), stride, pad);
}

Tensor GradientTape::conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                            int stride, int pad) {
    const ConvDims d = conv_dims(input, kernel, stride, pad);
    if (bias.defined()) {
        check(bias.rank() == 1 && bias.dim(0) == d.cout,
              "conv2d: bias must be [Cout] = [" + std::to_string(d.cout) + "]");
    }
    const std::size_t K = d.K(), N = d.N();
    std::vector<double> cols(K * N);
    im2col(input.data().data(), d, stride, pad, cols.data());
    Tensor out = Tensor::zeros({d.cout, d.out_h, d.out_w});
    kern::active().matmul(kernel.data().data(), cols.data(), out.mutable_data().data(),
                          static_cast<std::size_t>(d.cout), K, N);
    if (bias.defined()) {
        auto o = out.mutable_data();
        for (int co = 0; co < d.cout; ++co) {
            const double b = bias.data()[static_cast<std::size_t>(co)];
            double* row = o.data() + static_cast<std::size_t>(co) * N;
            for (std::size_t i = 0; i < N; ++i) row[i] += b;
        }
    }
    Recorder r = bias.defined() ? TapeOps::begin(*this, {&input, &kernel, &bias})
                                : TapeOps::begin(*this, {&input, &kernel});
    TapeOps::finish(r, out, [t = this, input, kernel, bias, out, d, stride, pad, K, N] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        if (kernel.requires_grad() || input.requires_grad()) {
            std::vector<double> cols(K * N);
            im2col(input.data().data(), d, stride, pad, cols.data());
            if (kernel.requires_grad()) {
                std::vector<double> gw(static_cast<std::size_t>(d.cout) * K);
                kern::active().matmul_nt(gy->data(), cols.data(), gw.data(),
                                         static_cast<std::size_t>(d.cout), N, K);
                accumulate(igr(t, kernel), gw);
            }
            if (input.requires_grad()) {
                std::vector<double> gcols(K * N);
                kern::active().matmul_tn(kernel.data().data(), gy->data(), gcols.data(), K,
                                         static_cast<std::size_t>(d.cout), N);
                col2im_acc(gcols.data(), d, stride, pad, igr(t, input).data());
            }
        }
        if (bias.defined() && bias.requires_grad()) {
            auto& gb = igr(t, bias);
            for (int co = 0; co < d.cout; ++co)
                gb[static_cast<std::size_t>(co)] +=
                    kern::active().sum(gy->data() + static_cast<std::size_t>(co) * N, N);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// resize_bilinear (align-corners-false)

namespace {
struct Lerp {
    int lo, hi;
    double frac;
};

std::vector<Lerp> lerp_axis(int in, int out) {
    std::vector<Lerp> m(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * scale - 0.5;
        Lerp& l = m[static_cast<std::size_t>(i)];
        if (src <= 0.0) {
            l = {0, 0, 0.0};
        } else if (src >= in - 1) {
            l = {in - 1, in - 1, 0.0};
        } else {
            const int lo = static_cast<int>(src);
            l = {lo, lo + 1, src - lo};
        }
    }
    return m;
}
}  // namespace

Tensor GradientTape::resize_bilinear(const Tensor& input, int out_h, int out_w) {
    check(input.rank() == 3, "resize_bilinear: input must be [C,H,W]");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: output extents must be >= 1");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    if (out_h == H && out_w == W) {
        // exact passthrough, bit-identical
        Tensor out = Tensor::from_data(input.shape(),
                                       std::vector<double>(input.data().begin(), input.data().end()));
        auto r = TapeOps::begin(*this, {&input});
        TapeOps::finish(r, out, [t = this, input, out] {
            auto* gy = ogr(t, out);
            if (!gy) return;
            accumulate(igr(t, input), *gy);
        });
        return out;
    }
    const auto ym = lerp_axis(H, out_h);
    const auto xm = lerp_axis(W, out_w);
    Tensor out = Tensor::zeros({C, out_h, out_w});
    {
        auto o = out.mutable_data();
        const double* xv = input.data().data();
        for (int c = 0; c < C; ++c) {
            const double* plane = xv + static_cast<std::size_t>(c) * H * W;
            double* oplane = o.data() + static_cast<std::size_t>(c) * out_h * out_w;
            for (int i = 0; i < out_h; ++i) {
                const Lerp& ly = ym[static_cast<std::size_t>(i)];
                const double* r0 = plane + static_cast<std::size_t>(ly.lo) * W;
                const double* r1 = plane + static_cast<std::size_t>(ly.hi) * W;
                double* orow = oplane + static_cast<std::size_t>(i) * out_w;
                for (int j = 0; j < out_w; ++j) {
                    const Lerp& lx = xm[static_cast<std::size_t>(j)];
                    const double top = r0[lx.lo] * (1.0 - lx.frac) + r0[lx.hi] * lx.frac;
                    const double bot = r1[lx.lo] * (1.0 - lx.frac) + r1[lx.hi] * lx.frac;
                    orow[j] = top * (1.0 - ly.frac) + bot * ly.frac;
                }
            }
        }
    }
    auto r = TapeOps::begin(*this, {&input});
    TapeOps::finish(r, out, [t = this, input, out, ym, xm, C, H, W, out_h, out_w] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        auto& gx = igr(t, input);
        for (int c = 0; c < C; ++c) {
            double* gplane = gx.data() + static_cast<std::size_t>(c) * H * W;
            const double* goplane = gy->data() + static_cast<std::size_t>(c) * out_h * out_w;
            for (int i = 0; i < out_h; ++i) {
                const Lerp& ly = ym[static_cast<std::size_t>(i)];
                for (int j = 0; j < out_w; ++j) {
                    const Lerp& lx = xm[static_cast<std::size_t>(j)];
                    const double g = goplane[static_cast<std::size_t>(i) * out_w + j];
                    gplane[static_cast<std::size_t>(ly.lo) * W + lx.lo] +=
                        g * (1.0 - ly.frac) * (1.0 - lx.frac);
                    gplane[static_cast<std::size_t>(ly.lo) * W + lx.hi] += g * (1.0 - ly.frac) * lx.frac;
                    gplane[static_cast<std::size_t>(ly.hi) * W + lx.lo] += g * ly.frac * (1.0 - lx.frac);
                    gplane[static_cast<std::size_t>(ly.hi) * W + lx.hi] += g * ly.frac * lx.frac;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// group_norm

Tensor GradientTape::group_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                                int groups) {
    check(input.rank() == 3, "group_norm: input must be [C,H,W]");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    check(groups >= 1 && C % groups == 0, "group_norm: groups must divide channel count");
    check(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
          "group_norm: gamma/beta must be [C]");
    constexpr double kEps = 1e-5;
    const int cpg = C / groups;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t gsize = static_cast<std::size_t>(cpg) * plane;

    Tensor out = Tensor::zeros(input.shape());
    std::vector<double> mu(static_cast<std::size_t>(groups));
    std::vector<double> inv(static_cast<std::size_t>(groups));
    {
        const double* xv = input.data().data();
        auto o = out.mutable_data();
        for (int g = 0; g < groups; ++g) {
            const double* xg = xv + static_cast<std::size_t>(g) * gsize;
            const double m = kern::active().sum(xg, gsize) / static_cast<double>(gsize);
            double var = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) {
                const double dlt = xg[i] - m;
                var += dlt * dlt;
            }
            var /= static_cast<double>(gsize);
            const double iv = 1.0 / std::sqrt(var + kEps);
            mu[static_cast<std::size_t>(g)] = m;
            inv[static_cast<std::size_t>(g)] = iv;
            for (int cc = 0; cc < cpg; ++cc) {
                const int c = g * cpg + cc;
                const double ga = gamma.data()[static_cast<std::size_t>(c)];
                const double be = beta.data()[static_cast<std::size_t>(c)];
                const double* xp = xv + static_cast<std::size_t>(c) * plane;
                double* op = o.data() + static_cast<std::size_t>(c) * plane;
                for (std::size_t i = 0; i < plane; ++i) op[i] = ga * (xp[i] - m) * iv + be;
            }
        }
    }
    auto r = TapeOps::begin(*this, {&input, &gamma, &beta});
    TapeOps::finish(r, out, [t = this, input, gamma, beta, out, groups, cpg, plane, gsize, mu,
                             inv, C] {
        auto* gy = ogr(t, out);
        if (!gy) return;
        const double* xv = input.data().data();
        const double* gv = gy->data();
        for (int g = 0; g < groups; ++g) {
            const double m = mu[static_cast<std::size_t>(g)];
            const double iv = inv[static_cast<std::size_t>(g)];
            // s1 = sum(dxhat), s2 = sum(dxhat * xhat) over the group
            double s1 = 0.0, s2 = 0.0;
            for (int cc = 0; cc < cpg; ++cc) {
                const int c = g * cpg + cc;
                const double ga = gamma.data()[static_cast<std::size_t>(c)];
                const double* xp = xv + static_cast<std::size_t>(c) * plane;
                const double* gp = gv + static_cast<std::size_t>(c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double xhat = (xp[i] - m) * iv;
                    const double dxh = gp[i] * ga;
                    s1 += dxh;
                    s2 += dxh * xhat;
                }
            }
            const double im = 1.0 / static_cast<double>(gsize);
            if (input.requires_grad()) {
                auto& gx = igr(t, input);
                for (int cc = 0; cc < cpg; ++cc) {
                    const int c = g * cpg + cc;
                    const double ga = gamma.data()[static_cast<std::size_t>(c)];
                    const double* xp = xv + static_cast<std::size_t>(c) * plane;
                    const double* gp = gv + static_cast<std::size_t>(c) * plane;
                    double* gxp = gx.data() + static_cast<std::size_t>(c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double xhat = (xp[i] - m) * iv;
                        gxp[i] += iv * (gp[i] * ga - (s1 + xhat * s2) * im);
                    }
                }
            }
            if (gamma.requires_grad() || beta.requires_grad()) {
                for (int cc = 0; cc < cpg; ++cc) {
                    const int c = g * cpg + cc;
                    const double* xp = xv + static_cast<std::size_t>(c) * plane;
                    const double* gp = gv + static_cast<std::size_t>(c) * plane;
                    double dg = 0.0, db = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        dg += gp[i] * (xp[i] - m) * iv;
                        db += gp[i];
                    }
                    if (gamma.requires_grad()) igr(t, gamma)[static_cast<std::size_t>(c)] += dg;
                    if (beta.requires_grad()) igr(t, beta)[static_cast<std::size_t>(c)] += db;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// gradient_check

GradCheckResult gradient_check(const ScalarFn& fn, const Tensor& point, double step) {
    std::vector<std::size_t> coords(point.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    return gradient_check(fn, point, step, coords);
}

GradCheckResult gradient_check(const ScalarFn& fn, const Tensor& point, double step,
                               std::span<const std::size_t> coords) {
    if (!(step > 0.0 && step <= 1e-2))
        throw std::invalid_argument("gradient_check: step must be in (0, 1e-2]");
    GradCheckResult res;

    std::vector<double> base(point.data().begin(), point.data().end());
    Tensor x = Tensor::from_data(point.shape(), base, /*requires_grad=*/true);
    GradientTape tape;
    Tensor loss = fn(tape, x);
    if (loss.size() != 1) throw ShapeError("gradient_check: function must return a scalar");
    if (!std::isfinite(loss.item())) {
        res.non_finite = true;
        res.bad_coord = 0;
        res.max_rel_error = std::numeric_limits<double>::infinity();
        return res;
    }
    tape.backward(loss);
    const std::span<const double> analytic = tape.grad(x);

    auto eval_at = [&](std::size_t coord, double value) {
        std::vector<double> d = base;
        d[coord] = value;
        GradientTape probe(/*recording=*/false);
        return fn(probe, Tensor::from_data(point.shape(), std::move(d))).item();
    };

    for (std::size_t c : coords) {
        const double fp = eval_at(c, base[c] + step);
        const double fm = eval_at(c, base[c] - step);
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            res.non_finite = true;
            res.bad_coord = c;
            res.max_rel_error = std::numeric_limits<double>::infinity();
            return res;
        }
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic.empty() ? 0.0 : analytic[c];
        const double rel = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_coord = c;
        }
    }
    return res;
}

}  // namespace uld
