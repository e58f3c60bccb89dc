#pragma once

#include <memory>
#include <vector>

#include "colonformer/encoder.hpp"

namespace colonformer {

struct PPMConfig {
    std::vector<int> pooling_bins{1, 2, 3, 6};  // strictly ascending
    int fused_channels = 128;
};

/// Pyramid pooling on the deepest feature map. Each branch adaptively pools to
/// b x b, projects to fused/4 channels and is resized back; branches are
/// concatenated with the identity map and projected to fused_channels.
/// Branches are linear (pool -> 1x1 conv -> nearest resize), so an input that
/// is constant per pooling cell passes through a bin unchanged.
class PyramidPooling : public Module {
public:
    PyramidPooling(Rng& rng, int in_channels, PPMConfig cfg);
    Var forward(const Var& f4) const;
    /// branch output before concatenation/projection (exposed for tests)
    Var branch_forward(int idx, const Var& f4) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    PPMConfig cfg;
    std::vector<std::unique_ptr<Conv2d>> branches;  // 1x1, in -> fused/4
    Conv2d project;                                 // 3x3, in + bins*fused/4 -> fused
};

/// Top-down lateral fusion of the feature pyramid with the PPM output seeding
/// the 1/32 level, followed by a concat-and-project head that emits the
/// single-channel global map at 1/4 resolution.
class UperDecoder : public Module {
public:
    UperDecoder(Rng& rng, const std::array<int, 4>& in_channels, PPMConfig ppm_cfg);

    Var ppm_forward(const Var& f4) const { return ppm.forward(f4); }
    /// returns fused maps at 1/4, 1/8, 1/16, 1/32 with fused_channels width
    std::array<Var, 4> fuse(const FeaturePyramid& pyramid, const Var& ppm_out) const;
    /// all levels resized to 1/4, concatenated, projected to one channel
    Var predict_global(const std::array<Var, 4>& fused) const;
    /// full pass: GlobalMap logits (B,1,H/4,W/4)
    Var forward(const FeaturePyramid& pyramid) const;

    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    PyramidPooling ppm;
    std::vector<std::unique_ptr<Conv2d>> laterals;  // 1x1, C_i -> D, levels 1..3
    std::vector<std::unique_ptr<Conv2d>> smooths;   // 3x3, D -> D, levels 1..3
    Conv2d bottleneck;                              // 3x3, 4D -> D
    Conv2d head;                                    // 1x1, D -> 1
};

}  // namespace colonformer
