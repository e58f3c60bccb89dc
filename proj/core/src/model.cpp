#include "colonformer/model.hpp"

namespace colonformer {

ModelConfig ModelConfig::for_variant(VariantName name) {
    ModelConfig cfg;
    cfg.backbone = BackboneVariant::from_name(name);
    if (name == VariantName::Tiny) {
        // desk-scale: single pooling bin so 32x32 inputs work, narrow decoder
        cfg.ppm = PPMConfig{{1}, 16};
        cfg.ra_head_channels = 8;
    }
    return cfg;
}

ColonFormer::ColonFormer(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      rng_(seed),
      encoder(rng_, cfg_.backbone),
      decoder(rng_, cfg_.backbone.channels, cfg_.ppm),
      refinement(rng_, cfg_.backbone.channels, cfg_.ra_head_channels, cfg_.cfp_dilations,
                 cfg_.axial_pos_bias, cfg_.axial_max_len) {}

PredictionSet ColonFormer::forward(const Var& image) const {
    FeaturePyramid pyramid = encoder.forward(image);
    Var ppm_out = decoder.ppm_forward(pyramid[3]);
    Var global_map = decoder.predict_global(decoder.fuse(pyramid, ppm_out));
    std::array<Var, 3> refined = refinement.forward(pyramid, global_map);
    PredictionSet out;
    out.maps = {global_map, refined[0], refined[1], refined[2]};
    return out;
}

void ColonFormer::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    encoder.visit_params(prefix + "encoder.", fn);
    decoder.visit_params(prefix + "decoder.", fn);
    refinement.visit_params(prefix + "refine.", fn);
}

}  // namespace colonformer
