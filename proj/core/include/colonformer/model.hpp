#pragma once

#include <memory>

#include "colonformer/decoder.hpp"
#include "colonformer/refinement.hpp"

namespace colonformer {

/// Ordered multi-resolution logit maps: [global 1/4, refined 1/32, 1/16, 1/8].
/// The last element is the network output.
struct PredictionSet {
    std::vector<Var> maps;
    const Var& final_map() const { return maps.back(); }
};

struct ModelConfig {
    BackboneVariant backbone = BackboneVariant::from_name(VariantName::S);
    PPMConfig ppm;                              // bins + fused width
    std::vector<int> cfp_dilations{1, 2, 4, 8};
    int ra_head_channels = 32;
    bool axial_pos_bias = false;
    int axial_max_len = 0;

    static ModelConfig for_variant(VariantName name);
};

class ColonFormer : public Module {
    ModelConfig cfg_;  // declared before the submodules that read it
    Rng rng_;

public:
    ColonFormer(const ModelConfig& cfg, std::uint64_t seed);
    explicit ColonFormer(VariantName name, std::uint64_t seed = 0)
        : ColonFormer(ModelConfig::for_variant(name), seed) {}

    /// image: (B,3,H,W), H,W divisible by 32
    PredictionSet forward(const Var& image) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    const ModelConfig& config() const { return cfg_; }

    MitEncoder encoder;
    UperDecoder decoder;
    RefinementModule refinement;
};

}  // namespace colonformer
