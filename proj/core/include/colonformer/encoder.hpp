#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "colonformer/nn.hpp"

namespace colonformer {

struct PatchEmbedConfig {
    int kernel;
    int stride;
    int padding;
    int out_channels;
};

struct AttentionConfig {
    int num_heads;
    int reduction_ratio;  // R, spatial reduction of keys/values
    int embed_dim;
};

/// Named backbone scales. B1..B5 are the Mix Transformer family; Tiny is a
/// desk-scale configuration for tests and toy training runs.
enum class VariantName { Tiny, XS, S, L, XL, XXL };

struct BackboneVariant {
    VariantName name;
    std::array<int, 4> depths;
    std::array<int, 4> channels;
    std::array<int, 4> heads;
    std::array<int, 4> sr_ratios;
    int mlp_ratio;

    static BackboneVariant from_name(VariantName name);
    static VariantName parse_name(const std::string& s);  // "XS","S","L","XL","XXL","tiny"
    std::string mit_name() const;                         // "MiT-B1".."MiT-B5"
};
std::string variant_str(VariantName v);

/// The four encoder feature maps, 1/4 .. 1/32 resolution, ascending channels.
using FeaturePyramid = std::array<Var, 4>;

struct Tokens {
    Var t;  // (B, N, C)
    std::int64_t h = 0;
    std::int64_t w = 0;
};

/// Strided overlapping convolution + layer norm over channels.
class OverlapPatchEmbed : public Module {
public:
    OverlapPatchEmbed(Rng& rng, int in_channels, PatchEmbedConfig cfg);
    Tokens forward(const Var& x) const;  // x: (B,C,H,W)
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    PatchEmbedConfig cfg;
    Conv2d proj;
    LayerNorm norm;
};

/// Multi-head self-attention whose keys/values are spatially reduced by a
/// factor R (strided RxR convolution + layer norm) before projection.
class EfficientSelfAttention : public Module {
public:
    EfficientSelfAttention(Rng& rng, AttentionConfig cfg);
    Var forward(const Tokens& tokens) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    /// number of key/value tokens the reduction produces for an h x w grid
    std::int64_t kv_tokens(std::int64_t h, std::int64_t w) const;

    AttentionConfig cfg;
    Linear q, k, v, proj;
    std::unique_ptr<Conv2d> sr;      // present when R > 1
    std::unique_ptr<LayerNorm> sr_norm;
};

/// expand -> 3x3 depthwise conv -> GELU -> project; residual add lives outside.
class MixFfn : public Module {
public:
    MixFfn(Rng& rng, int channels, int ratio);
    Var forward(const Tokens& tokens) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    Linear fc1;
    Conv2d dwconv;
    Linear fc2;
};

class MitBlock : public Module {
public:
    MitBlock(Rng& rng, AttentionConfig cfg, int mlp_ratio);
    Var forward(const Tokens& tokens) const;  // pre-norm, residuals outside
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    LayerNorm norm1;
    EfficientSelfAttention attn;
    LayerNorm norm2;
    MixFfn ffn;
};

class MitStage : public Module {
public:
    MitStage(Rng& rng, int in_channels, PatchEmbedConfig embed_cfg, AttentionConfig attn_cfg,
             int depth, int mlp_ratio);
    Tokens forward(const Var& x) const;  // x: (B,C,H,W) -> stage tokens
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    OverlapPatchEmbed embed;
    std::vector<std::unique_ptr<MitBlock>> blocks;
    LayerNorm norm;
};

class MitEncoder : public Module {
public:
    MitEncoder(Rng& rng, const BackboneVariant& variant);
    /// x: (B,3,H,W), H and W divisible by 32 -> F1..F4
    FeaturePyramid forward(const Var& x) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    BackboneVariant variant;
    std::vector<std::unique_ptr<MitStage>> stages;
};

/// tokens (B,N,C) -> feature map (B,C,h,w); inverse of map_to_tokens
Var tokens_to_map(const Var& tokens, std::int64_t h, std::int64_t w);
Var map_to_tokens(const Var& map);

}  // namespace colonformer
