#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "colonformer/tensor.hpp"

namespace colonformer {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::int64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

struct ImageMetrics {
    Scalar dice = 0, iou = 0, recall = 0, precision = 0;
};

struct CurvePoint {
    Scalar threshold = 0, fpr = 0, tpr = 0, recall = 0, precision = 0;
};

struct MetricsReport {
    std::vector<ImageMetrics> per_image;
    ImageMetrics aggregate;  // arithmetic mean of per-image values
    std::vector<CurvePoint> curve;
};

/// pixel positive iff p >= t
Tensor binarize(const Tensor& p, Scalar t);

ConfusionCounts confusion(const Tensor& pred_bin, const Tensor& g);

/// dice = (2tp+eps)/(2tp+fp+fn+eps), iou = (tp+eps)/(tp+fp+fn+eps)
std::pair<Scalar, Scalar> dice_iou(const ConfusionCounts& c, Scalar eps = 1e-8);
std::pair<Scalar, Scalar> dice_iou(const Tensor& pred_bin, const Tensor& g, Scalar eps = 1e-8);

/// recall = tp/(tp+fn+eps), precision = tp/(tp+fp+eps)
std::pair<Scalar, Scalar> recall_precision(const ConfusionCounts& c, Scalar eps = 1e-8);
std::pair<Scalar, Scalar> recall_precision(const Tensor& pred_bin, const Tensor& g,
                                           Scalar eps = 1e-8);

ImageMetrics image_metrics(const Tensor& prob, const Tensor& g, Scalar threshold = 0.5,
                           Scalar eps = 1e-8);

/// Mean of per-image metrics, in input order.
ImageMetrics aggregate_metrics(const std::vector<ImageMetrics>& per_image);

/// Confusion pooled over the full set at each threshold; thresholds ascending.
std::vector<CurvePoint> sweep_curves(const std::vector<Tensor>& probs,
                                     const std::vector<Tensor>& gts,
                                     const std::vector<Scalar>& thresholds);
std::vector<Scalar> uniform_thresholds(int n = 256);  // [0,1] inclusive
Scalar roc_auc(const std::vector<CurvePoint>& curve);  // trapezoid over (fpr,tpr)

/// CSV: header threshold,fpr,tpr,recall,precision
void write_curves_csv(std::ostream& os, const std::vector<CurvePoint>& curve);

}  // namespace colonformer
