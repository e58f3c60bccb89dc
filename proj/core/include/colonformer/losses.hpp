#pragma once

#include "colonformer/autodiff.hpp"
#include "colonformer/model.hpp"

namespace colonformer {

struct LossConfig {
    Scalar alpha = 0.25;
    Scalar gamma = 2.0;
    Scalar lambda = 5.0;
    int neighborhood = 31;       // odd window side for boundary weights
    bool include_center = true;  // whether the window includes the pixel itself
    Scalar eps = 1e-6;           // probability clamp for the focal log
};

/// Per-pixel boundary importance: beta_ij = |mean(g over the clipped
/// neighborhood window) - g_ij|. Zero wherever the mask is locally constant.
/// g: (B,1,H,W) binary -> beta: (B,1,H,W), computed via integral images.
Tensor boundary_weights(const Tensor& g, const LossConfig& cfg);

/// Weighted focal loss over probabilities p in (0,1):
///   -sum (1+lambda*beta) * alpha * (1-q)^gamma * log q / sum (1+lambda*beta)
/// with q = p where g=1 and 1-p elsewhere; p clamped to [eps, 1-eps].
Var weighted_focal(const Var& p, const Tensor& g, const Tensor& beta, const LossConfig& cfg);

/// Weighted IoU loss:
///   1 - sum(g*p*(1+lambda*beta)) / sum((g+p-g*p)*(1+lambda*beta))
/// p is used unclamped; an exactly-empty 0/0 instance scores 0.
Var weighted_iou(const Var& p, const Tensor& g, const Tensor& beta, const LossConfig& cfg);

/// (weighted focal + weighted IoU) / 2 for one probability map.
Var total_loss(const Var& p, const Tensor& g, const Tensor& beta, const LossConfig& cfg);
Var total_loss(const Var& p, const Tensor& g, const LossConfig& cfg);

/// Deep supervision: every logit map resized bilinearly to the ground-truth
/// size, passed through sigmoid, scored with total_loss; losses summed with
/// equal weights.
Var deep_supervised_loss(const PredictionSet& preds, const Tensor& g, const LossConfig& cfg);

}  // namespace colonformer
