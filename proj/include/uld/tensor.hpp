#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace uld {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
};
}  // namespace detail

// Dense row-major tensor of 64-bit floats. A Tensor is a cheap value handle;
// the payload is shared and treated as immutable once built. The only
// sanctioned in-place mutation is through mutable_data(), used by parameter
// initialization and the optimizer between training steps.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::size_t size() const { return impl_->data.size(); }
    bool requires_grad() const { return impl_ && impl_->requires_grad; }

    std::span<const double> data() const { return impl_->data; }
    std::span<double> mutable_data() { return impl_->data; }
    double item() const;  // value of a single-element tensor

    detail::TensorImpl* impl() const { return impl_.get(); }
    std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Operations are recorded in execution order while any
// input requires a gradient; backward() replays them in exact reverse order.
// Gradients live in tape-owned buffers keyed by tensor identity, so tensors
// themselves stay immutable and one tensor can appear in many tapes.
//
// A non-recording tape evaluates forward only (used for inference and for
// the finite-difference probes of gradient_check).
class GradientTape {
  public:
    explicit GradientTape(bool recording = true) : recording_(recording) {}
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    bool recording() const { return recording_; }

    // elementwise, same shape
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor div(const Tensor& a, const Tensor& b);
    Tensor minimum(const Tensor& a, const Tensor& b);

    // scalar broadcast
    Tensor add_scalar(const Tensor& a, double c);
    Tensor mul_scalar(const Tensor& a, double c);
    Tensor mul_scalar_t(const Tensor& a, const Tensor& s);  // s has exactly one element

    // elementwise unary
    Tensor neg(const Tensor& a);
    Tensor relu(const Tensor& a);
    Tensor exp(const Tensor& a);
    Tensor log(const Tensor& a);
    Tensor sigmoid(const Tensor& a);
    Tensor softplus(const Tensor& a);

    // reductions
    Tensor sum(const Tensor& a);                      // -> [1]
    Tensor mean(const Tensor& a);                     // -> [1]
    Tensor sum_rows(const Tensor& a);                 // [R,C] -> [1,C]

    // linear algebra on 2-D tensors
    Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n] -> [m,n]
    Tensor transpose(const Tensor& a);                // [r,c] -> [c,r]
    Tensor softmax_rows(const Tensor& a);             // row-wise softmax
    Tensor softmax_cols(const Tensor& a);             // column-wise softmax
    Tensor mul_rowvec(const Tensor& a, const Tensor& v);  // [R,C] * [1,C], row broadcast

    // shape & assembly
    Tensor reshape(const Tensor& a, Shape shape);
    Tensor concat0(std::span<const Tensor> parts);    // along leading axis
    Tensor slice_rows(const Tensor& a, int begin, int end);       // [R,C] rows [begin,end)
    Tensor gather_cols(const Tensor& a, std::vector<int> cols);   // [R,C] -> [R,|cols|]

    // image ops; images are [C,H,W], kernels [Cout,Cin,kH,kW]
    Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad);
    Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
                  int pad);
    Tensor resize_bilinear(const Tensor& input, int out_h, int out_w);
    Tensor group_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, int groups);

    void backward(const Tensor& loss);
    // Gradient accumulated for t during backward(); empty span if t was not
    // reached or does not require a gradient.
    std::span<const double> grad(const Tensor& t) const;

  private:
    friend class TapeOps;
    std::vector<double>* find_grad(const detail::TensorImpl* t);
    std::vector<double>& grad_buf(const Tensor& t);
    void record(std::function<void()> fn);

    bool recording_ = true;
    bool ran_backward_ = false;
    std::vector<std::function<void()>> nodes_;
    // keyed by tensor identity; only ever looked up, never iterated
    std::unordered_map<const detail::TensorImpl*, std::vector<double>> grads_;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_coord = 0;
    bool non_finite = false;     // function value was not finite during probing
    std::size_t bad_coord = 0;   // offending coordinate when non_finite
};

using ScalarFn = std::function<Tensor(GradientTape&, const Tensor&)>;

// Central finite differences of fn around point, compared with the tape
// gradient: max over coordinates of |analytic - numeric| /
// max(1e-12, |analytic| + |numeric|). step must be in (0, 1e-2].
GradCheckResult gradient_check(const ScalarFn& fn, const Tensor& point, double step);

// Same check restricted to a subset of coordinates; used where a full sweep
// is too expensive (whole-model checks).
GradCheckResult gradient_check(const ScalarFn& fn, const Tensor& point, double step,
                               std::span<const std::size_t> coords);

}  // namespace uld
