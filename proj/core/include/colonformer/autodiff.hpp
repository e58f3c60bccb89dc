#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "colonformer/tensor.hpp"

namespace colonformer {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Tensor& grad_out)> backward;
};

/// Handle to a node in the reverse-mode tape. Copies alias the same node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    static Var constant(Tensor value) { return Var(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim() const { return node_->value.dim(); }
    std::int64_t size(int d) const { return node_->value.size(d); }
    std::int64_t numel() const { return node_->value.numel(); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && node_->grad.defined(); }
    Tensor& grad();
    const Tensor& grad() const { return node_->grad; }
    void zero_grad();

    /// Runs reverse-mode accumulation from this node, seeded with ones.
    void backward() const;

    std::shared_ptr<Node>& node() { return node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// While alive, ops record no tape (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};
bool grad_enabled();

void accumulate_grad(const std::shared_ptr<Node>& n, const Tensor& g);

/// Sums `t` down to `target` shape (numpy broadcast transpose).
Tensor reduce_to(const Tensor& t, const Shape& target);
Shape broadcast_shape(const Shape& a, const Shape& b);

// ---- elementwise / broadcast ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, Scalar s);
Var mul_scalar(const Var& a, Scalar s);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator+(const Var& a, Scalar s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, Scalar s) { return add_scalar(a, -s); }
inline Var operator*(const Var& a, Scalar s) { return mul_scalar(a, s); }
inline Var operator*(Scalar s, const Var& a) { return mul_scalar(a, s); }
inline Var operator-(Scalar s, const Var& a) { return add_scalar(neg(a), s); }
inline Var operator-(const Var& a) { return neg(a); }

// ---- unary ----
Var log(const Var& a);
Var exp(const Var& a);
Var pow(const Var& a, Scalar exponent);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);  // exact erf form
Var clamp(const Var& a, Scalar lo, Scalar hi);

// ---- reductions ----
Var sum(const Var& a);   // -> shape {1}
Var mean(const Var& a);  // -> shape {1}

// ---- shape ----
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<int>& axes);
Var concat(const std::vector<Var>& xs, int axis);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);  // (M,K) x (K,N)
Var bmm(const Var& a, const Var& b);     // (B,M,K) x (B,K,N)

// ---- nn primitives ----
Var softmax_lastdim(const Var& a);
Var layer_norm_lastdim(const Var& x, const Var& gamma, const Var& beta, Scalar eps);

struct Conv2dSpec {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int groups = 1;
};
std::int64_t conv_out_dim(std::int64_t in, int kernel, int stride, int padding, int dilation);
Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dSpec& spec);

Var resize_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w);
Var resize_nearest(const Var& x, std::int64_t out_h, std::int64_t out_w);
Var adaptive_avg_pool2d(const Var& x, std::int64_t out_h, std::int64_t out_w);

}  // namespace colonformer
