#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "colonformer/autodiff.hpp"
#include "colonformer/common.hpp"
#include "colonformer/losses.hpp"
#include "colonformer/nn.hpp"

namespace cftest {

using colonformer::Rng;
using colonformer::Scalar;
using colonformer::Shape;
using colonformer::Tensor;
using colonformer::Var;

inline Tensor rand_tensor(Shape shape, Rng& rng, Scalar lo = -1.0, Scalar hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline Tensor rand_mask(Shape shape, Rng& rng, Scalar p_fg = 0.5) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform() < p_fg ? 1.0 : 0.0;
    return t;
}

inline Scalar max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return std::numeric_limits<Scalar>::infinity();
    Scalar m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline Scalar rel_err(Scalar a, Scalar b, Scalar floor = 1e-6) {
    return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), floor);
}

/// Central-difference check of d(scalar_fn)/dx against reverse-mode gradients.
/// scalar_fn must evaluate the expression from the *current contents* of the
/// storage behind `x` each time it is called. Returns the max relative error.
inline Scalar fd_check(Var& x, const std::function<Scalar()>& scalar_fn,
                       const std::function<Var()>& graph_fn, Scalar h = 1e-5,
                       int max_coords = 64, std::uint64_t pick_seed = 7) {
    Var y = graph_fn();
    if (y.numel() != 1) throw colonformer::Error("fd_check expects a scalar output");
    y.backward();
    const Tensor analytic = x.grad().clone();
    x.zero_grad();

    Tensor& storage = x.node()->value;
    const std::int64_t n = storage.numel();
    std::vector<std::int64_t> coords;
    if (max_coords < 0 || n <= max_coords) {
        for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
        Rng rng(pick_seed);
        coords.push_back(0);
        coords.push_back(n - 1);
        while (static_cast<int>(coords.size()) < max_coords) {
            coords.push_back(static_cast<std::int64_t>(rng.next_below(
                static_cast<std::uint64_t>(n))));
        }
    }
    Scalar worst = 0.0;
    for (std::int64_t i : coords) {
        const Scalar saved = storage[i];
        storage[i] = saved + h;
        const Scalar up = scalar_fn();
        storage[i] = saved - h;
        const Scalar down = scalar_fn();
        storage[i] = saved;
        const Scalar fd = (up - down) / (2.0 * h);
        worst = std::max(worst, rel_err(analytic[i], fd));
    }
    return worst;
}

// ---- independent loss oracles: nested per-pixel loops ----

inline Tensor naive_boundary_weights(const Tensor& g, const colonformer::LossConfig& cfg) {
    const std::int64_t b = g.size(0), h = g.size(2), w = g.size(3);
    const std::int64_t r = cfg.neighborhood / 2;
    Tensor beta(g.shape());
    for (std::int64_t n = 0; n < b; ++n) {
        for (std::int64_t i = 0; i < h; ++i) {
            for (std::int64_t j = 0; j < w; ++j) {
                Scalar sum = 0.0, count = 0.0;
                for (std::int64_t y = std::max<std::int64_t>(0, i - r);
                     y <= std::min(h - 1, i + r); ++y) {
                    for (std::int64_t x = std::max<std::int64_t>(0, j - r);
                         x <= std::min(w - 1, j + r); ++x) {
                        if (!cfg.include_center && y == i && x == j) continue;
                        sum += g.at({n, 0, y, x});
                        count += 1.0;
                    }
                }
                const Scalar center = g.at({n, 0, i, j});
                beta.at({n, 0, i, j}) = count > 0 ? std::abs(sum / count - center) : 0.0;
            }
        }
    }
    return beta;
}

inline Scalar naive_weighted_focal(const Tensor& p, const Tensor& g, const Tensor& beta,
                                   const colonformer::LossConfig& cfg) {
    Scalar num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
        const Scalar w = 1.0 + cfg.lambda * beta[i];
        const Scalar pc = std::min(std::max(p[i], cfg.eps), 1.0 - cfg.eps);
        const Scalar q = g[i] != 0.0 ? pc : 1.0 - pc;
        num += w * cfg.alpha * std::pow(1.0 - q, cfg.gamma) * std::log(q);
        den += w;
    }
    return -num / den;
}

inline Scalar naive_weighted_iou(const Tensor& p, const Tensor& g, const Tensor& beta,
                                 const colonformer::LossConfig& cfg) {
    Scalar num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
        const Scalar w = 1.0 + cfg.lambda * beta[i];
        num += g[i] * p[i] * w;
        den += (g[i] + p[i] - g[i] * p[i]) * w;
    }
    if (den == 0.0) return 0.0;
    return 1.0 - num / den;
}

}  // namespace cftest
