#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "colonformer/common.hpp"

namespace colonformer {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

/// Dense row-major tensor of doubles. Copies share storage; tensors that flow
/// through the autodiff graph are treated as immutable once built.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<Scalar>>(shape_numel(shape_), 0.0)) {}
    Tensor(Shape shape, Scalar fill)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<Scalar>>(shape_numel(shape_), fill)) {}
    Tensor(Shape shape, std::vector<Scalar> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(Scalar v) { return Tensor(Shape{1}, v); }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int dim() const { return static_cast<int>(shape_.size()); }
    std::int64_t size(int d) const;
    std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

    Scalar* data() { return data_->data(); }
    const Scalar* data() const { return data_->data(); }

    Scalar& operator[](std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
    Scalar operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

    Scalar& at(std::initializer_list<std::int64_t> idx);
    Scalar at(std::initializer_list<std::int64_t> idx) const;

    /// View with a new shape over the same storage (numel must match).
    Tensor reshaped(Shape new_shape) const;
    /// Deep copy with its own storage.
    Tensor clone() const;

    bool all_finite() const;
    Scalar item() const;  // single-element tensors

    void fill_(Scalar v);
    void add_(const Tensor& other);  // in-place, same shape

private:
    Shape shape_;
    std::shared_ptr<std::vector<Scalar>> data_;
};

// ---- raw (non-differentiable) kernels shared by data plumbing and tests ----

/// Bilinear resize, half-pixel centers (align_corners = false).
Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);
/// Nearest-neighbour resize, src = floor(dst * in/out).
Tensor resize_nearest(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

}  // namespace colonformer
