#include "colonformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace colonformer {

Tensor binarize(const Tensor& p, Scalar t) {
    Tensor out(p.shape());
    const Scalar* src = p.data();
    Scalar* dst = out.data();
    for (std::int64_t i = 0; i < p.numel(); ++i) dst[i] = src[i] >= t ? 1.0 : 0.0;
    return out;
}

ConfusionCounts confusion(const Tensor& pred_bin, const Tensor& g) {
    if (pred_bin.shape() != g.shape()) {
        throw Error("confusion: shape mismatch " + shape_str(pred_bin.shape()) + " vs " +
                    shape_str(g.shape()));
    }
    ConfusionCounts c;
    const Scalar* p = pred_bin.data();
    const Scalar* t = g.data();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
        const bool pp = p[i] != 0.0;
        const bool tt = t[i] != 0.0;
        if (pp && tt) {
            ++c.tp;
        } else if (pp) {
            ++c.fp;
        } else if (tt) {
            ++c.fn;
        } else {
            ++c.tn;
        }
    }
    return c;
}

std::pair<Scalar, Scalar> dice_iou(const ConfusionCounts& c, Scalar eps) {
    const Scalar tp = static_cast<Scalar>(c.tp);
    const Scalar fpfn = static_cast<Scalar>(c.fp + c.fn);
    const Scalar dice = (2.0 * tp + eps) / (2.0 * tp + fpfn + eps);
    const Scalar iou = (tp + eps) / (tp + fpfn + eps);
    return {dice, iou};
}

std::pair<Scalar, Scalar> dice_iou(const Tensor& pred_bin, const Tensor& g, Scalar eps) {
    return dice_iou(confusion(pred_bin, g), eps);
}

std::pair<Scalar, Scalar> recall_precision(const ConfusionCounts& c, Scalar eps) {
    const Scalar tp = static_cast<Scalar>(c.tp);
    return {tp / (tp + static_cast<Scalar>(c.fn) + eps),
            tp / (tp + static_cast<Scalar>(c.fp) + eps)};
}

std::pair<Scalar, Scalar> recall_precision(const Tensor& pred_bin, const Tensor& g, Scalar eps) {
    return recall_precision(confusion(pred_bin, g), eps);
}

ImageMetrics image_metrics(const Tensor& prob, const Tensor& g, Scalar threshold, Scalar eps) {
    const ConfusionCounts c = confusion(binarize(prob, threshold), g);
    ImageMetrics m;
    std::tie(m.dice, m.iou) = dice_iou(c, eps);
    std::tie(m.recall, m.precision) = recall_precision(c, eps);
    return m;
}

ImageMetrics aggregate_metrics(const std::vector<ImageMetrics>& per_image) {
    if (per_image.empty()) throw Error("aggregate_metrics: empty metric list");
    ImageMetrics mean;
    for (const auto& m : per_image) {
        mean.dice += m.dice;
        mean.iou += m.iou;
        mean.recall += m.recall;
        mean.precision += m.precision;
    }
    const Scalar n = static_cast<Scalar>(per_image.size());
    mean.dice /= n;
    mean.iou /= n;
    mean.recall /= n;
    mean.precision /= n;
    return mean;
}

std::vector<CurvePoint> sweep_curves(const std::vector<Tensor>& probs,
                                     const std::vector<Tensor>& gts,
                                     const std::vector<Scalar>& thresholds) {
    if (probs.empty() || probs.size() != gts.size()) {
        throw Error("sweep_curves: empty or mismatched prediction/ground-truth sets");
    }
    if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
        throw Error("sweep_curves: thresholds must be sorted ascending");
    }
    std::vector<CurvePoint> out;
    out.reserve(thresholds.size());
    constexpr Scalar eps = 1e-12;
    for (Scalar t : thresholds) {
        ConfusionCounts pooled;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            pooled += confusion(binarize(probs[i], t), gts[i]);
        }
        CurvePoint pt;
        pt.threshold = t;
        pt.tpr = static_cast<Scalar>(pooled.tp) /
                 (static_cast<Scalar>(pooled.tp + pooled.fn) + eps);
        pt.fpr = static_cast<Scalar>(pooled.fp) /
                 (static_cast<Scalar>(pooled.fp + pooled.tn) + eps);
        pt.recall = pt.tpr;
        pt.precision = static_cast<Scalar>(pooled.tp) /
                       (static_cast<Scalar>(pooled.tp + pooled.fp) + eps);
        out.push_back(pt);
    }
    return out;
}

std::vector<Scalar> uniform_thresholds(int n) {
    std::vector<Scalar> t(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = static_cast<Scalar>(i) / (n - 1);
    return t;
}

Scalar roc_auc(const std::vector<CurvePoint>& curve) {
    // points run from high fpr (threshold 0) to low; integrate |dx| trapezoids
    Scalar auc = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        const Scalar dx = curve[i - 1].fpr - curve[i].fpr;
        auc += dx * 0.5 * (curve[i - 1].tpr + curve[i].tpr);
    }
    return auc;
}

void write_curves_csv(std::ostream& os, const std::vector<CurvePoint>& curve) {
    os << "threshold,fpr,tpr,recall,precision\n";
    for (const auto& p : curve) {
        os << p.threshold << ',' << p.fpr << ',' << p.tpr << ',' << p.recall << ','
           << p.precision << '\n';
    }
}

}  // namespace colonformer
