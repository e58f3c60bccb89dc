#include "colonformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace colonformer {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d < 0) throw Error("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape)) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape_)) {
        throw Error("value count " + std::to_string(values.size()) + " does not match shape " +
                    shape_str(shape_));
    }
    data_ = std::make_shared<std::vector<Scalar>>(std::move(values));
}

std::int64_t Tensor::size(int d) const {
    if (d < 0) d += dim();
    if (d < 0 || d >= dim()) throw Error("dimension index out of range");
    return shape_[static_cast<std::size_t>(d)];
}

namespace {
std::size_t flat_index(const Shape& shape, std::initializer_list<std::int64_t> idx) {
    if (idx.size() != shape.size()) throw Error("index rank mismatch");
    std::int64_t off = 0;
    auto it = idx.begin();
    for (std::size_t d = 0; d < shape.size(); ++d, ++it) {
        if (*it < 0 || *it >= shape[d]) throw Error("index out of bounds");
        off = off * shape[d] + *it;
    }
    return static_cast<std::size_t>(off);
}
}  // namespace

Scalar& Tensor::at(std::initializer_list<std::int64_t> idx) {
    return (*data_)[flat_index(shape_, idx)];
}

Scalar Tensor::at(std::initializer_list<std::int64_t> idx) const {
    return (*data_)[flat_index(shape_, idx)];
}

Tensor Tensor::reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw Error("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                    ": element count mismatch");
    }
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape_ = shape_;
    if (data_) t.data_ = std::make_shared<std::vector<Scalar>>(*data_);
    return t;
}

bool Tensor::all_finite() const {
    if (!data_) return true;
    for (Scalar v : *data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Scalar Tensor::item() const {
    if (numel() != 1) throw Error("item() on tensor with " + std::to_string(numel()) + " elements");
    return (*data_)[0];
}

void Tensor::fill_(Scalar v) { std::fill(data_->begin(), data_->end(), v); }

void Tensor::add_(const Tensor& other) {
    if (other.shape() != shape_) throw Error("add_: shape mismatch");
    const Scalar* src = other.data();
    Scalar* dst = data();
    const std::int64_t n = numel();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
    if (x.dim() != 4) throw Error("resize_bilinear expects (B,C,H,W), got " + shape_str(x.shape()));
    const std::int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    Tensor out(Shape{b, c, out_h, out_w});
    const Scalar sh = static_cast<Scalar>(h) / static_cast<Scalar>(out_h);
    const Scalar sw = static_cast<Scalar>(w) / static_cast<Scalar>(out_w);
    const Scalar* in = x.data();
    Scalar* o = out.data();
    for (std::int64_t p = 0; p < b * c; ++p) {
        const Scalar* plane = in + p * h * w;
        Scalar* oplane = o + p * out_h * out_w;
        for (std::int64_t i = 0; i < out_h; ++i) {
            Scalar sy = (static_cast<Scalar>(i) + 0.5) * sh - 0.5;
            sy = std::min(std::max(sy, 0.0), static_cast<Scalar>(h - 1));
            const std::int64_t y0 = static_cast<std::int64_t>(sy);
            const std::int64_t y1 = std::min(y0 + 1, h - 1);
            const Scalar fy = sy - static_cast<Scalar>(y0);
            for (std::int64_t j = 0; j < out_w; ++j) {
                Scalar sx = (static_cast<Scalar>(j) + 0.5) * sw - 0.5;
                sx = std::min(std::max(sx, 0.0), static_cast<Scalar>(w - 1));
                const std::int64_t x0 = static_cast<std::int64_t>(sx);
                const std::int64_t x1 = std::min(x0 + 1, w - 1);
                const Scalar fx = sx - static_cast<Scalar>(x0);
                oplane[i * out_w + j] =
                    plane[y0 * w + x0] * (1 - fy) * (1 - fx) + plane[y0 * w + x1] * (1 - fy) * fx +
                    plane[y1 * w + x0] * fy * (1 - fx) + plane[y1 * w + x1] * fy * fx;
            }
        }
    }
    return out;
}

Tensor resize_nearest(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
    if (x.dim() != 4) throw Error("resize_nearest expects (B,C,H,W), got " + shape_str(x.shape()));
    const std::int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    Tensor out(Shape{b, c, out_h, out_w});
    const Scalar* in = x.data();
    Scalar* o = out.data();
    for (std::int64_t p = 0; p < b * c; ++p) {
        const Scalar* plane = in + p * h * w;
        Scalar* oplane = o + p * out_h * out_w;
        for (std::int64_t i = 0; i < out_h; ++i) {
            const std::int64_t sy =
                std::min(static_cast<std::int64_t>(static_cast<Scalar>(i) * h / out_h), h - 1);
            for (std::int64_t j = 0; j < out_w; ++j) {
                const std::int64_t sx =
                    std::min(static_cast<std::int64_t>(static_cast<Scalar>(j) * w / out_w), w - 1);
                oplane[i * out_w + j] = plane[sy * w + sx];
            }
        }
    }
    return out;
}

}  // namespace colonformer
