#include "colonformer/decoder.hpp"

namespace colonformer {

PyramidPooling::PyramidPooling(Rng& rng, int in_channels, PPMConfig cfg_)
    : cfg(std::move(cfg_)),
      project(rng, in_channels + static_cast<int>(cfg.pooling_bins.size()) *
                                     (cfg.fused_channels / 4),
              cfg.fused_channels, 3, Conv2dSpec{1, 1, 1, 1}) {
    if (cfg.fused_channels % 4 != 0) throw Error("PPM: fused_channels must be divisible by 4");
    for (std::size_t i = 0; i + 1 < cfg.pooling_bins.size(); ++i) {
        if (cfg.pooling_bins[i] >= cfg.pooling_bins[i + 1]) {
            throw Error("PPM: pooling bins must be strictly ascending");
        }
    }
    for (std::size_t i = 0; i < cfg.pooling_bins.size(); ++i) {
        branches.push_back(
            std::make_unique<Conv2d>(rng, in_channels, cfg.fused_channels / 4, 1));
    }
}

Var PyramidPooling::branch_forward(int idx, const Var& f4) const {
    const int bin = cfg.pooling_bins[static_cast<std::size_t>(idx)];
    const std::int64_t h = f4.size(2), w = f4.size(3);
    if (bin > h || bin > w) {
        throw Error("PPM: bin " + std::to_string(bin) + " exceeds feature size " +
                    std::to_string(h) + "x" + std::to_string(w));
    }
    Var pooled = adaptive_avg_pool2d(f4, bin, bin);
    Var projected = branches[static_cast<std::size_t>(idx)]->forward(pooled);
    return resize_nearest(projected, h, w);
}

Var PyramidPooling::forward(const Var& f4) const {
    std::vector<Var> parts{f4};
    for (int i = 0; i < static_cast<int>(branches.size()); ++i) {
        parts.push_back(branch_forward(i, f4));
    }
    return relu(project.forward(concat(parts, 1)));
}

void PyramidPooling::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < branches.size(); ++i) {
        branches[i]->visit_params(prefix + "branch" + std::to_string(i) + ".", fn);
    }
    project.visit_params(prefix + "project.", fn);
}

UperDecoder::UperDecoder(Rng& rng, const std::array<int, 4>& in_channels, PPMConfig ppm_cfg)
    : ppm(rng, in_channels[3], ppm_cfg),
      bottleneck(rng, 4 * ppm_cfg.fused_channels, ppm_cfg.fused_channels, 3,
                 Conv2dSpec{1, 1, 1, 1}),
      head(rng, ppm_cfg.fused_channels, 1, 1) {
    for (int i = 0; i < 3; ++i) {
        laterals.push_back(
            std::make_unique<Conv2d>(rng, in_channels[static_cast<std::size_t>(i)],
                                     ppm_cfg.fused_channels, 1));
        smooths.push_back(std::make_unique<Conv2d>(rng, ppm_cfg.fused_channels,
                                                   ppm_cfg.fused_channels, 3,
                                                   Conv2dSpec{1, 1, 1, 1}));
    }
}

std::array<Var, 4> UperDecoder::fuse(const FeaturePyramid& pyramid, const Var& ppm_out) const {
    std::array<Var, 4> fused;
    fused[3] = ppm_out;  // 1/32, no lateral sum at the top
    Var upper = ppm_out;
    for (int i = 2; i >= 0; --i) {
        Var lat = relu(laterals[static_cast<std::size_t>(i)]->forward(pyramid[i]));
        const std::int64_t h = lat.size(2), w = lat.size(3);
        Var summed = add(lat, resize_bilinear(upper, h, w));
        fused[static_cast<std::size_t>(i)] =
            relu(smooths[static_cast<std::size_t>(i)]->forward(summed));
        upper = summed;
    }
    return fused;
}

Var UperDecoder::predict_global(const std::array<Var, 4>& fused) const {
    const std::int64_t h = fused[0].size(2), w = fused[0].size(3);
    std::vector<Var> parts{fused[0]};
    for (int i = 1; i < 4; ++i) {
        parts.push_back(resize_bilinear(fused[static_cast<std::size_t>(i)], h, w));
    }
    return head.forward(relu(bottleneck.forward(concat(parts, 1))));
}

Var UperDecoder::forward(const FeaturePyramid& pyramid) const {
    return predict_global(fuse(pyramid, ppm.forward(pyramid[3])));
}

void UperDecoder::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    ppm.visit_params(prefix + "ppm.", fn);
    for (std::size_t i = 0; i < laterals.size(); ++i) {
        laterals[i]->visit_params(prefix + "lateral" + std::to_string(i) + ".", fn);
        smooths[i]->visit_params(prefix + "smooth" + std::to_string(i) + ".", fn);
    }
    bottleneck.visit_params(prefix + "bottleneck.", fn);
    head.visit_params(prefix + "head.", fn);
}

}  // namespace colonformer
