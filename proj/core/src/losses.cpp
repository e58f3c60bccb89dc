#include "colonformer/losses.hpp"

#include <cmath>

namespace colonformer {

Tensor boundary_weights(const Tensor& g, const LossConfig& cfg) {
    if (g.dim() != 4 || g.size(1) != 1) {
        throw Error("boundary_weights expects (B,1,H,W), got " + shape_str(g.shape()));
    }
    if (cfg.neighborhood < 1 || cfg.neighborhood % 2 == 0) {
        throw Error("neighborhood must be a positive odd window side");
    }
    const std::int64_t b = g.size(0), h = g.size(2), w = g.size(3);
    const std::int64_t r = cfg.neighborhood / 2;
    Tensor beta(g.shape());
    std::vector<Scalar> integral(static_cast<std::size_t>((h + 1) * (w + 1)), 0.0);
    for (std::int64_t n = 0; n < b; ++n) {
        const Scalar* plane = g.data() + n * h * w;
        // summed-area table, 1-based
        for (std::int64_t i = 0; i < h; ++i) {
            for (std::int64_t j = 0; j < w; ++j) {
                integral[(i + 1) * (w + 1) + (j + 1)] =
                    plane[i * w + j] + integral[i * (w + 1) + (j + 1)] +
                    integral[(i + 1) * (w + 1) + j] - integral[i * (w + 1) + j];
            }
        }
        Scalar* out = beta.data() + n * h * w;
        for (std::int64_t i = 0; i < h; ++i) {
            const std::int64_t y0 = std::max<std::int64_t>(0, i - r);
            const std::int64_t y1 = std::min(h - 1, i + r);
            for (std::int64_t j = 0; j < w; ++j) {
                const std::int64_t x0 = std::max<std::int64_t>(0, j - r);
                const std::int64_t x1 = std::min(w - 1, j + r);
                Scalar sum = integral[(y1 + 1) * (w + 1) + (x1 + 1)] -
                             integral[y0 * (w + 1) + (x1 + 1)] -
                             integral[(y1 + 1) * (w + 1) + x0] + integral[y0 * (w + 1) + x0];
                Scalar count = static_cast<Scalar>((y1 - y0 + 1) * (x1 - x0 + 1));
                const Scalar center = plane[i * w + j];
                if (!cfg.include_center) {
                    sum -= center;
                    count -= 1.0;
                }
                out[i * w + j] = count > 0 ? std::abs(sum / count - center) : 0.0;
            }
        }
    }
    return beta;
}

namespace {
void check_loss_inputs(const Var& p, const Tensor& g, const Tensor& beta) {
    if (p.shape() != g.shape() || g.shape() != beta.shape()) {
        throw Error("loss inputs must share one shape: p=" + shape_str(p.shape()) +
                    " g=" + shape_str(g.shape()) + " beta=" + shape_str(beta.shape()));
    }
    if (!p.value().all_finite()) throw Error("loss input contains non-finite predictions");
    if (!g.all_finite()) throw Error("loss input contains non-finite ground truth");
}

Tensor pixel_weights(const Tensor& beta, Scalar lambda) {
    Tensor w(beta.shape());
    const Scalar* pb = beta.data();
    Scalar* pw = w.data();
    for (std::int64_t i = 0; i < beta.numel(); ++i) pw[i] = 1.0 + lambda * pb[i];
    return w;
}
}  // namespace

Var weighted_focal(const Var& p, const Tensor& g, const Tensor& beta, const LossConfig& cfg) {
    check_loss_inputs(p, g, beta);
    const Tensor w = pixel_weights(beta, cfg.lambda);
    Scalar w_sum = 0.0;
    for (std::int64_t i = 0; i < w.numel(); ++i) w_sum += w[i];

    Var pc = clamp(p, cfg.eps, 1.0 - cfg.eps);
    const Var gv = Var::constant(g);
    // q = p where g = 1, 1 - p elsewhere; algebraic form keeps it differentiable
    Var q = add(mul(gv, pc), mul(add_scalar(neg(gv), 1.0), add_scalar(neg(pc), 1.0)));
    Var focal = mul(Var::constant(w), mul_scalar(mul(pow(add_scalar(neg(q), 1.0), cfg.gamma),
                                                     log(q)),
                                                 cfg.alpha));
    return mul_scalar(neg(sum(focal)), 1.0 / w_sum);
}

Var weighted_iou(const Var& p, const Tensor& g, const Tensor& beta, const LossConfig& cfg) {
    check_loss_inputs(p, g, beta);
    const Tensor w = pixel_weights(beta, cfg.lambda);
    const Var wv = Var::constant(w);
    const Var gv = Var::constant(g);
    Var gp = mul(gv, p);
    Var numer = sum(mul(gp, wv));
    Var denom = sum(mul(sub(add(gv, p), gp), wv));
    if (denom.value().item() == 0.0) {
        // empty mask, empty prediction: perfect negative scores zero
        return Var::constant(Tensor::scalar(0.0));
    }
    return add_scalar(neg(div(numer, denom)), 1.0);
}

Var total_loss(const Var& p, const Tensor& g, const Tensor& beta, const LossConfig& cfg) {
    return mul_scalar(add(weighted_focal(p, g, beta, cfg), weighted_iou(p, g, beta, cfg)), 0.5);
}

Var total_loss(const Var& p, const Tensor& g, const LossConfig& cfg) {
    return total_loss(p, g, boundary_weights(g, cfg), cfg);
}

Var deep_supervised_loss(const PredictionSet& preds, const Tensor& g, const LossConfig& cfg) {
    if (preds.maps.empty()) throw Error("deep_supervised_loss: empty prediction set");
    const std::int64_t h = g.size(2), w = g.size(3);
    const Tensor beta = boundary_weights(g, cfg);
    Var acc;
    for (const Var& logits : preds.maps) {
        Var p = sigmoid(resize_bilinear(logits, h, w));
        Var l = total_loss(p, g, beta, cfg);
        acc = acc.defined() ? add(acc, l) : l;
    }
    return acc;
}

}  // namespace colonformer
