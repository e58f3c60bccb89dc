#include "colonformer/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace colonformer {

namespace {

thread_local bool g_grad_enabled = true;

using MatRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

Shape aligned(const Shape& s, std::size_t rank) {
    Shape out(rank, 1);
    std::copy(s.begin(), s.end(), out.begin() + (rank - s.size()));
    return out;
}

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

// strides of `s` aligned to `out` rank, 0 where broadcast
std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    const Shape a = aligned(s, out.size());
    auto st = contiguous_strides(a);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (a[i] == 1 && out[i] != 1) st[i] = 0;
    }
    return st;
}

// walks every coordinate of `out`, calling f(out_flat, a_off, b_off)
template <typename F>
void broadcast_walk(const Shape& out, const std::vector<std::int64_t>& sa,
                    const std::vector<std::int64_t>& sb, F&& f) {
    const std::size_t rank = out.size();
    const std::int64_t n = shape_numel(out);
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        f(i, oa, ob);
        for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward) {
    Var out(std::move(value), false);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& v : inputs) {
            if (v.defined() && v.requires_grad()) needs = true;
        }
    }
    if (needs) {
        out.node()->requires_grad = true;
        for (auto& v : inputs) {
            if (v.defined()) out.node()->parents.push_back(v.node());
        }
        out.node()->backward = std::move(backward);
    }
    return out;
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor& Var::grad() {
    if (!node_->grad.defined()) node_->grad = Tensor(node_->value.shape());
    return node_->grad;
}

void Var::zero_grad() {
    if (node_ && node_->grad.defined()) node_->grad.fill_(0.0);
}

void Var::backward() const {
    // iterative post-order topological sort
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, child] = stack.back();
        if (child < n->parents.size()) {
            Node* p = n->parents[child++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad = Tensor(node_->value.shape(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.defined()) n->backward(n->grad);
    }
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

void accumulate_grad(const std::shared_ptr<Node>& n, const Tensor& g) {
    if (!n->requires_grad) return;
    if (g.shape() != n->value.shape()) {
        throw Error("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                    shape_str(n->value.shape()));
    }
    if (!n->grad.defined()) {
        n->grad = g.clone();
    } else {
        n->grad.add_(g);
    }
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    const Shape aa = aligned(a, rank), bb = aligned(b, rank);
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (aa[i] == bb[i] || bb[i] == 1) {
            out[i] = aa[i];
        } else if (aa[i] == 1) {
            out[i] = bb[i];
        } else {
            throw Error("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
        }
    }
    return out;
}

Tensor reduce_to(const Tensor& t, const Shape& target) {
    if (t.shape() == target) return t;
    Tensor out(target);
    const auto st = broadcast_strides(target, t.shape());
    const Scalar* src = t.data();
    Scalar* dst = out.data();
    broadcast_walk(t.shape(), st, st, [&](std::int64_t i, std::int64_t off, std::int64_t) {
        dst[off] += src[i];
    });
    return out;
}

namespace {

enum class BinOp { Add, Sub, Mul, Div };

Var binary(const Var& a, const Var& b, BinOp op) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    Tensor out(out_shape);
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const Scalar* pa = a.value().data();
    const Scalar* pb = b.value().data();
    Scalar* po = out.data();
    broadcast_walk(out_shape, sa, sb, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
        switch (op) {
            case BinOp::Add: po[i] = pa[oa] + pb[ob]; break;
            case BinOp::Sub: po[i] = pa[oa] - pb[ob]; break;
            case BinOp::Mul: po[i] = pa[oa] * pb[ob]; break;
            case BinOp::Div: po[i] = pa[oa] / pb[ob]; break;
        }
    });
    Var av = a, bv = b;
    return make_op(std::move(out), {a, b}, [av, bv, sa, sb, out_shape, op](const Tensor& g) {
        const Scalar* pg = g.data();
        const Scalar* pa = av.value().data();
        const Scalar* pb = bv.value().data();
        if (av.requires_grad()) {
            Tensor ga(out_shape);
            Scalar* pga = ga.data();
            broadcast_walk(out_shape, sa, sb,
                           [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                               switch (op) {
                                   case BinOp::Add:
                                   case BinOp::Sub: pga[i] = pg[i]; break;
                                   case BinOp::Mul: pga[i] = pg[i] * pb[ob]; break;
                                   case BinOp::Div: pga[i] = pg[i] / pb[ob]; break;
                               }
                               (void)oa;
                           });
            accumulate_grad(av.node(), reduce_to(ga, av.shape()));
        }
        if (bv.requires_grad()) {
            Tensor gb(out_shape);
            Scalar* pgb = gb.data();
            broadcast_walk(out_shape, sa, sb,
                           [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                               switch (op) {
                                   case BinOp::Add: pgb[i] = pg[i]; break;
                                   case BinOp::Sub: pgb[i] = -pg[i]; break;
                                   case BinOp::Mul: pgb[i] = pg[i] * pa[oa]; break;
                                   case BinOp::Div:
                                       pgb[i] = -pg[i] * pa[oa] / (pb[ob] * pb[ob]);
                                       break;
                               }
                           });
            accumulate_grad(bv.node(), reduce_to(gb, bv.shape()));
        }
    });
}

template <typename FwdF, typename BwdF>
Var unary(const Var& a, FwdF fwd, BwdF dydx) {
    Tensor out(a.shape());
    const Scalar* pa = a.value().data();
    Scalar* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    Var av = a;
    Tensor saved = out;  // shares storage, some derivatives reuse the output
    return make_op(std::move(out), {a}, [av, saved, dydx, n](const Tensor& g) {
        Tensor ga(av.shape());
        const Scalar* pg = g.data();
        const Scalar* px = av.value().data();
        const Scalar* py = saved.data();
        Scalar* pga = ga.data();
        for (std::int64_t i = 0; i < n; ++i) pga[i] = pg[i] * dydx(px[i], py[i]);
        accumulate_grad(av.node(), ga);
    });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::Add); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::Sub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::Mul); }
Var div(const Var& a, const Var& b) { return binary(a, b, BinOp::Div); }

Var neg(const Var& a) {
    return unary(a, [](Scalar x) { return -x; }, [](Scalar, Scalar) { return -1.0; });
}

Var add_scalar(const Var& a, Scalar s) {
    return unary(a, [s](Scalar x) { return x + s; }, [](Scalar, Scalar) { return 1.0; });
}

Var mul_scalar(const Var& a, Scalar s) {
    return unary(a, [s](Scalar x) { return x * s; }, [s](Scalar, Scalar) { return s; });
}

Var log(const Var& a) {
    return unary(a, [](Scalar x) { return std::log(x); },
                 [](Scalar x, Scalar) { return 1.0 / x; });
}

Var exp(const Var& a) {
    return unary(a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

Var pow(const Var& a, Scalar p) {
    return unary(a, [p](Scalar x) { return std::pow(x, p); },
                 [p](Scalar x, Scalar) { return p * std::pow(x, p - 1.0); });
}

Var sigmoid(const Var& a) {
    return unary(a,
                 [](Scalar x) {
                     if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                     const Scalar e = std::exp(x);
                     return e / (1.0 + e);
                 },
                 [](Scalar, Scalar y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
    return unary(a, [](Scalar x) { return x > 0 ? x : 0.0; },
                 [](Scalar x, Scalar) { return x > 0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
    constexpr Scalar kInvSqrt2 = 0.70710678118654752440;
    constexpr Scalar kInvSqrt2Pi = 0.39894228040143267794;
    return unary(a,
                 [=](Scalar x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
                 [=](Scalar x, Scalar) {
                     return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                            x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
                 });
}

Var clamp(const Var& a, Scalar lo, Scalar hi) {
    return unary(a, [=](Scalar x) { return std::min(std::max(x, lo), hi); },
                 [=](Scalar x, Scalar) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(const Var& a) {
    Scalar acc = 0.0;
    const Scalar* pa = a.value().data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
    Var av = a;
    return make_op(Tensor::scalar(acc), {a}, [av](const Tensor& g) {
        accumulate_grad(av.node(), Tensor(av.shape(), g[0]));
    });
}

Var mean(const Var& a) {
    const std::int64_t n = a.numel();
    return mul_scalar(sum(a), 1.0 / static_cast<Scalar>(n));
}

Var reshape(const Var& a, Shape shape) {
    Var av = a;
    const Shape in_shape = a.shape();
    return make_op(a.value().reshaped(std::move(shape)), {a}, [av, in_shape](const Tensor& g) {
        accumulate_grad(av.node(), g.reshaped(in_shape));
    });
}

namespace {
Tensor permute_tensor(const Tensor& t, const std::vector<int>& axes) {
    const std::size_t rank = t.shape().size();
    if (axes.size() != rank) throw Error("permute: axes rank mismatch");
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = t.shape()[axes[i]];
    Tensor out(out_shape);
    const auto in_strides = contiguous_strides(t.shape());
    std::vector<std::int64_t> walk_strides(rank);
    for (std::size_t i = 0; i < rank; ++i) walk_strides[i] = in_strides[axes[i]];
    const Scalar* src = t.data();
    Scalar* dst = out.data();
    broadcast_walk(out_shape, walk_strides, walk_strides,
                   [&](std::int64_t i, std::int64_t off, std::int64_t) { dst[i] = src[off]; });
    return out;
}
}  // namespace

Var permute(const Var& a, const std::vector<int>& axes) {
    std::vector<int> inverse(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = static_cast<int>(i);
    Var av = a;
    return make_op(permute_tensor(a.value(), axes), {a}, [av, inverse](const Tensor& g) {
        accumulate_grad(av.node(), permute_tensor(g, inverse));
    });
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw Error("concat of zero tensors");
    const std::size_t rank = xs[0].shape().size();
    if (axis < 0) axis += static_cast<int>(rank);
    Shape out_shape = xs[0].shape();
    std::int64_t axis_total = 0;
    for (const auto& x : xs) {
        if (x.shape().size() != rank) throw Error("concat: rank mismatch");
        for (std::size_t d = 0; d < rank; ++d) {
            if (static_cast<int>(d) != axis && x.shape()[d] != out_shape[d]) {
                throw Error("concat: shape mismatch at dim " + std::to_string(d));
            }
        }
        axis_total += x.shape()[axis];
    }
    out_shape[axis] = axis_total;

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];

    Tensor out(out_shape);
    Scalar* po = out.data();
    std::int64_t col_off = 0;
    for (const auto& x : xs) {
        const std::int64_t ax = x.shape()[axis];
        const Scalar* px = x.value().data();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy(px + o * ax * inner, px + (o + 1) * ax * inner,
                      po + (o * axis_total + col_off) * inner);
        }
        col_off += ax;
    }
    std::vector<Var> inputs = xs;
    return make_op(std::move(out), inputs,
                   [inputs, outer, inner, axis_total, axis](const Tensor& g) {
                       const Scalar* pg = g.data();
                       std::int64_t col_off = 0;
                       for (const auto& x : inputs) {
                           const std::int64_t ax = x.shape()[axis];
                           if (x.requires_grad()) {
                               Tensor gx(x.shape());
                               Scalar* pgx = gx.data();
                               for (std::int64_t o = 0; o < outer; ++o) {
                                   const Scalar* src = pg + (o * axis_total + col_off) * inner;
                                   std::copy(src, src + ax * inner, pgx + o * ax * inner);
                               }
                               accumulate_grad(x.node(), gx);
                           }
                           col_off += ax;
                       }
                   });
}

Var matmul(const Var& a, const Var& b) {
    if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
        throw Error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
    }
    const std::int64_t m = a.size(0), k = a.size(1), n = b.size(1);
    Tensor out(Shape{m, n});
    MapC ma(a.value().data(), m, k), mb(b.value().data(), k, n);
    MapM mo(out.data(), m, n);
    mo.noalias() = ma * mb;
    Var av = a, bv = b;
    return make_op(std::move(out), {a, b}, [av, bv, m, k, n](const Tensor& g) {
        MapC mg(g.data(), m, n);
        MapC ma(av.value().data(), m, k), mb(bv.value().data(), k, n);
        if (av.requires_grad()) {
            Tensor ga(Shape{m, k});
            MapM mga(ga.data(), m, k);
            mga.noalias() = mg * mb.transpose();
            accumulate_grad(av.node(), ga);
        }
        if (bv.requires_grad()) {
            Tensor gb(Shape{k, n});
            MapM mgb(gb.data(), k, n);
            mgb.noalias() = ma.transpose() * mg;
            accumulate_grad(bv.node(), gb);
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    if (a.dim() != 3 || b.dim() != 3 || a.size(0) != b.size(0) || a.size(2) != b.size(1)) {
        throw Error("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
    }
    const std::int64_t bs = a.size(0), m = a.size(1), k = a.size(2), n = b.size(2);
    Tensor out(Shape{bs, m, n});
    for (std::int64_t i = 0; i < bs; ++i) {
        MapC ma(a.value().data() + i * m * k, m, k);
        MapC mb(b.value().data() + i * k * n, k, n);
        MapM mo(out.data() + i * m * n, m, n);
        mo.noalias() = ma * mb;
    }
    Var av = a, bv = b;
    return make_op(std::move(out), {a, b}, [av, bv, bs, m, k, n](const Tensor& g) {
        if (av.requires_grad()) {
            Tensor ga(av.shape());
            for (std::int64_t i = 0; i < bs; ++i) {
                MapC mg(g.data() + i * m * n, m, n);
                MapC mb(bv.value().data() + i * k * n, k, n);
                MapM mga(ga.data() + i * m * k, m, k);
                mga.noalias() = mg * mb.transpose();
            }
            accumulate_grad(av.node(), ga);
        }
        if (bv.requires_grad()) {
            Tensor gb(bv.shape());
            for (std::int64_t i = 0; i < bs; ++i) {
                MapC mg(g.data() + i * m * n, m, n);
                MapC ma(av.value().data() + i * m * k, m, k);
                MapM mgb(gb.data() + i * k * n, k, n);
                mgb.noalias() = ma.transpose() * mg;
            }
            accumulate_grad(bv.node(), gb);
        }
    });
}

Var softmax_lastdim(const Var& a) {
    const std::int64_t c = a.size(-1);
    const std::int64_t rows = a.numel() / c;
    Tensor out(a.shape());
    const Scalar* px = a.value().data();
    Scalar* py = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const Scalar* x = px + r * c;
        Scalar* y = py + r * c;
        Scalar mx = x[0];
        for (std::int64_t i = 1; i < c; ++i) mx = std::max(mx, x[i]);
        Scalar z = 0.0;
        for (std::int64_t i = 0; i < c; ++i) {
            y[i] = std::exp(x[i] - mx);
            z += y[i];
        }
        const Scalar inv = 1.0 / z;
        for (std::int64_t i = 0; i < c; ++i) y[i] *= inv;
    }
    Var av = a;
    Tensor saved = out;
    return make_op(std::move(out), {a}, [av, saved, rows, c](const Tensor& g) {
        Tensor ga(av.shape());
        const Scalar* pg = g.data();
        const Scalar* py = saved.data();
        Scalar* pga = ga.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const Scalar* gr = pg + r * c;
            const Scalar* yr = py + r * c;
            Scalar dot = 0.0;
            for (std::int64_t i = 0; i < c; ++i) dot += gr[i] * yr[i];
            Scalar* o = pga + r * c;
            for (std::int64_t i = 0; i < c; ++i) o[i] = yr[i] * (gr[i] - dot);
        }
        accumulate_grad(av.node(), ga);
    });
}

Var layer_norm_lastdim(const Var& x, const Var& gamma, const Var& beta, Scalar eps) {
    const std::int64_t c = x.size(-1);
    if (gamma.numel() != c || beta.numel() != c) throw Error("layer_norm: affine size mismatch");
    const std::int64_t rows = x.numel() / c;
    Tensor out(x.shape());
    Tensor mean_t(Shape{rows}), inv_t(Shape{rows});
    const Scalar* px = x.value().data();
    const Scalar* pgm = gamma.value().data();
    const Scalar* pbt = beta.value().data();
    Scalar* py = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const Scalar* xr = px + r * c;
        Scalar mu = 0.0;
        for (std::int64_t i = 0; i < c; ++i) mu += xr[i];
        mu /= static_cast<Scalar>(c);
        Scalar var = 0.0;
        for (std::int64_t i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<Scalar>(c);
        const Scalar inv = 1.0 / std::sqrt(var + eps);
        mean_t[r] = mu;
        inv_t[r] = inv;
        Scalar* yr = py + r * c;
        for (std::int64_t i = 0; i < c; ++i) yr[i] = (xr[i] - mu) * inv * pgm[i] + pbt[i];
    }
    Var xv = x, gv = gamma, bv = beta;
    return make_op(std::move(out), {x, gamma, beta},
                   [xv, gv, bv, mean_t, inv_t, rows, c](const Tensor& g) {
                       const Scalar* px = xv.value().data();
                       const Scalar* pgm = gv.value().data();
                       const Scalar* pg = g.data();
                       Tensor gx(xv.shape()), ggm(Shape{c}), gbt(Shape{c});
                       Scalar* pgx = gx.data();
                       Scalar* pggm = ggm.data();
                       Scalar* pgbt = gbt.data();
                       for (std::int64_t r = 0; r < rows; ++r) {
                           const Scalar* xr = px + r * c;
                           const Scalar* gr = pg + r * c;
                           const Scalar mu = mean_t[r], inv = inv_t[r];
                           Scalar s1 = 0.0, s2 = 0.0;
                           for (std::int64_t i = 0; i < c; ++i) {
                               const Scalar xh = (xr[i] - mu) * inv;
                               const Scalar h = gr[i] * pgm[i];
                               s1 += h;
                               s2 += h * xh;
                               pggm[i] += gr[i] * xh;
                               pgbt[i] += gr[i];
                           }
                           Scalar* gxr = pgx + r * c;
                           for (std::int64_t i = 0; i < c; ++i) {
                               const Scalar xh = (xr[i] - mu) * inv;
                               gxr[i] = inv * (gr[i] * pgm[i] -
                                               (s1 + xh * s2) / static_cast<Scalar>(c));
                           }
                       }
                       accumulate_grad(xv.node(), gx);
                       accumulate_grad(gv.node(), ggm);
                       accumulate_grad(bv.node(), gbt);
                   });
}

std::int64_t conv_out_dim(std::int64_t in, int kernel, int stride, int padding, int dilation) {
    const std::int64_t eff = static_cast<std::int64_t>(kernel - 1) * dilation + 1;
    return (in + 2 * static_cast<std::int64_t>(padding) - eff) / stride + 1;
}

namespace {

// col buffer layout: (cin_g * kh * kw) rows x (ho * wo) cols
void im2col(const Scalar* x, std::int64_t cin_g, std::int64_t h, std::int64_t w, int kh, int kw,
            const Conv2dSpec& s, std::int64_t ho, std::int64_t wo, Scalar* col) {
    for (std::int64_t c = 0; c < cin_g; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                Scalar* row = col + ((c * kh + ky) * kw + kx) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * s.stride - s.padding + ky * s.dilation;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + oy * wo, row + (oy + 1) * wo, 0.0);
                        continue;
                    }
                    const Scalar* xr = x + (c * h + iy) * w;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * s.stride - s.padding + kx * s.dilation;
                        row[oy * wo + ox] = (ix >= 0 && ix < w) ? xr[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const Scalar* col, std::int64_t cin_g, std::int64_t h, std::int64_t w, int kh,
                int kw, const Conv2dSpec& s, std::int64_t ho, std::int64_t wo, Scalar* x) {
    for (std::int64_t c = 0; c < cin_g; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const Scalar* row = col + ((c * kh + ky) * kw + kx) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * s.stride - s.padding + ky * s.dilation;
                    if (iy < 0 || iy >= h) continue;
                    Scalar* xr = x + (c * h + iy) * w;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * s.stride - s.padding + kx * s.dilation;
                        if (ix >= 0 && ix < w) xr[ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dSpec& spec) {
    if (x.dim() != 4) throw Error("conv2d expects (B,Cin,H,W), got " + shape_str(x.shape()));
    if (weight.dim() != 4) throw Error("conv2d weight must be (Cout,Cin/g,kh,kw)");
    const std::int64_t b = x.size(0), cin = x.size(1), h = x.size(2), w = x.size(3);
    const std::int64_t cout = weight.size(0), cin_g = weight.size(1);
    const int kh = static_cast<int>(weight.size(2)), kw = static_cast<int>(weight.size(3));
    if (cin % spec.groups != 0 || cout % spec.groups != 0 || cin / spec.groups != cin_g) {
        throw Error("conv2d: channel/group mismatch");
    }
    const std::int64_t ho = conv_out_dim(h, kh, spec.stride, spec.padding, spec.dilation);
    const std::int64_t wo = conv_out_dim(w, kw, spec.stride, spec.padding, spec.dilation);
    if (ho < 1 || wo < 1) {
        throw Error("conv2d: input " + shape_str(x.shape()) +
                    " smaller than effective kernel (k=" + std::to_string(kh) +
                    ", dilation=" + std::to_string(spec.dilation) +
                    ", padding=" + std::to_string(spec.padding) + ")");
    }
    const std::int64_t cout_g = cout / spec.groups;
    const std::int64_t krows = cin_g * kh * kw;

    Tensor out(Shape{b, cout, ho, wo});
    std::vector<Scalar> col(static_cast<std::size_t>(krows * ho * wo));
    for (std::int64_t n = 0; n < b; ++n) {
        for (int g = 0; g < spec.groups; ++g) {
            const Scalar* xg = x.value().data() + (n * cin + g * cin_g) * h * w;
            im2col(xg, cin_g, h, w, kh, kw, spec, ho, wo, col.data());
            MapC mw(weight.value().data() + g * cout_g * krows, cout_g, krows);
            MapC mc(col.data(), krows, ho * wo);
            MapM mo(out.data() + (n * cout + g * cout_g) * ho * wo, cout_g, ho * wo);
            mo.noalias() = mw * mc;
        }
        if (bias.defined()) {
            const Scalar* pb = bias.value().data();
            Scalar* po = out.data() + n * cout * ho * wo;
            for (std::int64_t c = 0; c < cout; ++c) {
                const Scalar bv = pb[c];
                Scalar* row = po + c * ho * wo;
                for (std::int64_t i = 0; i < ho * wo; ++i) row[i] += bv;
            }
        }
    }

    Var xv = x, wv = weight, biasv = bias;
    std::vector<Var> inputs = bias.defined() ? std::vector<Var>{x, weight, bias}
                                             : std::vector<Var>{x, weight};
    return make_op(std::move(out), inputs, [=](const Tensor& g) {
        std::vector<Scalar> col(static_cast<std::size_t>(krows * ho * wo));
        Tensor gx = xv.requires_grad() ? Tensor(xv.shape()) : Tensor();
        Tensor gw = wv.requires_grad() ? Tensor(wv.shape()) : Tensor();
        for (std::int64_t n = 0; n < b; ++n) {
            for (int gi = 0; gi < spec.groups; ++gi) {
                MapC mg(g.data() + (n * cout + gi * cout_g) * ho * wo, cout_g, ho * wo);
                if (wv.requires_grad() || xv.requires_grad()) {
                    const Scalar* xg = xv.value().data() + (n * cin + gi * cin_g) * h * w;
                    if (wv.requires_grad()) {
                        im2col(xg, cin_g, h, w, kh, kw, spec, ho, wo, col.data());
                        MapC mc(col.data(), krows, ho * wo);
                        MapM mgw(gw.data() + gi * cout_g * krows, cout_g, krows);
                        mgw.noalias() += mg * mc.transpose();
                    }
                    if (xv.requires_grad()) {
                        MapC mw(wv.value().data() + gi * cout_g * krows, cout_g, krows);
                        MapM mcol(col.data(), krows, ho * wo);
                        mcol.noalias() = mw.transpose() * mg;
                        col2im_add(col.data(), cin_g, h, w, kh, kw, spec, ho, wo,
                                   gx.data() + (n * cin + gi * cin_g) * h * w);
                    }
                }
            }
        }
        if (xv.requires_grad()) accumulate_grad(xv.node(), gx);
        if (wv.requires_grad()) accumulate_grad(wv.node(), gw);
        if (biasv.defined() && biasv.requires_grad()) {
            Tensor gb(Shape{cout});
            Scalar* pgb = gb.data();
            for (std::int64_t n = 0; n < b; ++n) {
                const Scalar* pg = g.data() + n * cout * ho * wo;
                for (std::int64_t c = 0; c < cout; ++c) {
                    Scalar acc = 0.0;
                    const Scalar* row = pg + c * ho * wo;
                    for (std::int64_t i = 0; i < ho * wo; ++i) acc += row[i];
                    pgb[c] += acc;
                }
            }
            accumulate_grad(biasv.node(), gb);
        }
    });
}

Var resize_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w) {
    Tensor out = resize_bilinear(x.value(), out_h, out_w);
    const std::int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    Var xv = x;
    return make_op(std::move(out), {x}, [xv, b, c, h, w, out_h, out_w](const Tensor& g) {
        Tensor gx(xv.shape());
        const Scalar sh = static_cast<Scalar>(h) / static_cast<Scalar>(out_h);
        const Scalar sw = static_cast<Scalar>(w) / static_cast<Scalar>(out_w);
        const Scalar* pg = g.data();
        Scalar* pgx = gx.data();
        for (std::int64_t p = 0; p < b * c; ++p) {
            const Scalar* gplane = pg + p * out_h * out_w;
            Scalar* xplane = pgx + p * h * w;
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
                    const Scalar gv = gplane[i * out_w + j];
                    xplane[y0 * w + x0] += gv * (1 - fy) * (1 - fx);
                    xplane[y0 * w + x1] += gv * (1 - fy) * fx;
                    xplane[y1 * w + x0] += gv * fy * (1 - fx);
                    xplane[y1 * w + x1] += gv * fy * fx;
                }
            }
        }
        accumulate_grad(xv.node(), gx);
    });
}

Var resize_nearest(const Var& x, std::int64_t out_h, std::int64_t out_w) {
    Tensor out = resize_nearest(x.value(), out_h, out_w);
    const std::int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    Var xv = x;
    return make_op(std::move(out), {x}, [xv, b, c, h, w, out_h, out_w](const Tensor& g) {
        Tensor gx(xv.shape());
        const Scalar* pg = g.data();
        Scalar* pgx = gx.data();
        for (std::int64_t p = 0; p < b * c; ++p) {
            const Scalar* gplane = pg + p * out_h * out_w;
            Scalar* xplane = pgx + p * h * w;
            for (std::int64_t i = 0; i < out_h; ++i) {
                const std::int64_t sy =
                    std::min(static_cast<std::int64_t>(static_cast<Scalar>(i) * h / out_h), h - 1);
                for (std::int64_t j = 0; j < out_w; ++j) {
                    const std::int64_t sx = std::min(
                        static_cast<std::int64_t>(static_cast<Scalar>(j) * w / out_w), w - 1);
                    xplane[sy * w + sx] += gplane[i * out_w + j];
                }
            }
        }
        accumulate_grad(xv.node(), gx);
    });
}

Var adaptive_avg_pool2d(const Var& x, std::int64_t out_h, std::int64_t out_w) {
    if (x.dim() != 4) throw Error("adaptive_avg_pool2d expects (B,C,H,W)");
    const std::int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (out_h > h || out_w > w) {
        throw Error("adaptive_avg_pool2d: output " + std::to_string(out_h) + "x" +
                    std::to_string(out_w) + " exceeds input " + std::to_string(h) + "x" +
                    std::to_string(w));
    }
    auto win = [](std::int64_t i, std::int64_t in, std::int64_t out) {
        const std::int64_t start = i * in / out;
        const std::int64_t end = (i + 1) * in % out == 0 ? (i + 1) * in / out
                                                         : (i + 1) * in / out + 1;
        return std::pair<std::int64_t, std::int64_t>{start, end};
    };
    Tensor out(Shape{b, c, out_h, out_w});
    const Scalar* px = x.value().data();
    Scalar* po = out.data();
    for (std::int64_t p = 0; p < b * c; ++p) {
        const Scalar* plane = px + p * h * w;
        Scalar* oplane = po + p * out_h * out_w;
        for (std::int64_t i = 0; i < out_h; ++i) {
            const auto [y0, y1] = win(i, h, out_h);
            for (std::int64_t j = 0; j < out_w; ++j) {
                const auto [x0, x1] = win(j, w, out_w);
                Scalar acc = 0.0;
                for (std::int64_t y = y0; y < y1; ++y) {
                    for (std::int64_t xx = x0; xx < x1; ++xx) acc += plane[y * w + xx];
                }
                oplane[i * out_w + j] = acc / static_cast<Scalar>((y1 - y0) * (x1 - x0));
            }
        }
    }
    Var xv = x;
    return make_op(std::move(out), {x}, [xv, b, c, h, w, out_h, out_w, win](const Tensor& g) {
        Tensor gx(xv.shape());
        const Scalar* pg = g.data();
        Scalar* pgx = gx.data();
        for (std::int64_t p = 0; p < b * c; ++p) {
            const Scalar* gplane = pg + p * out_h * out_w;
            Scalar* xplane = pgx + p * h * w;
            for (std::int64_t i = 0; i < out_h; ++i) {
                const auto [y0, y1] = win(i, h, out_h);
                for (std::int64_t j = 0; j < out_w; ++j) {
                    const auto [x0, x1] = win(j, w, out_w);
                    const Scalar gv =
                        gplane[i * out_w + j] / static_cast<Scalar>((y1 - y0) * (x1 - x0));
                    for (std::int64_t y = y0; y < y1; ++y) {
                        for (std::int64_t xx = x0; xx < x1; ++xx) xplane[y * w + xx] += gv;
                    }
                }
            }
        }
        accumulate_grad(xv.node(), gx);
    });
}

}  // namespace colonformer
