#include "colonformer/encoder.hpp"

#include <cmath>

namespace colonformer {

BackboneVariant BackboneVariant::from_name(VariantName name) {
    switch (name) {
        case VariantName::Tiny:
            return {name, {1, 1, 1, 1}, {8, 16, 24, 32}, {1, 2, 2, 4}, {8, 4, 2, 1}, 2};
        case VariantName::XS:  // MiT-B1
            return {name, {2, 2, 2, 2}, {64, 128, 320, 512}, {1, 2, 5, 8}, {8, 4, 2, 1}, 4};
        case VariantName::S:  // MiT-B2
            return {name, {3, 4, 6, 3}, {64, 128, 320, 512}, {1, 2, 5, 8}, {8, 4, 2, 1}, 4};
        case VariantName::L:  // MiT-B3
            return {name, {3, 4, 18, 3}, {64, 128, 320, 512}, {1, 2, 5, 8}, {8, 4, 2, 1}, 4};
        case VariantName::XL:  // MiT-B4
            return {name, {3, 8, 27, 3}, {64, 128, 320, 512}, {1, 2, 5, 8}, {8, 4, 2, 1}, 4};
        case VariantName::XXL:  // MiT-B5
            return {name, {3, 6, 40, 3}, {64, 128, 320, 512}, {1, 2, 5, 8}, {8, 4, 2, 1}, 4};
    }
    throw Error("unknown backbone variant");
}

VariantName BackboneVariant::parse_name(const std::string& s) {
    if (s == "tiny" || s == "Tiny" || s == "TINY") return VariantName::Tiny;
    if (s == "XS" || s == "xs") return VariantName::XS;
    if (s == "S" || s == "s") return VariantName::S;
    if (s == "L" || s == "l") return VariantName::L;
    if (s == "XL" || s == "xl") return VariantName::XL;
    if (s == "XXL" || s == "xxl") return VariantName::XXL;
    throw Error("unknown variant name '" + s + "' (expected XS, S, L, XL, XXL or tiny)");
}

std::string variant_str(VariantName v) {
    switch (v) {
        case VariantName::Tiny: return "tiny";
        case VariantName::XS: return "XS";
        case VariantName::S: return "S";
        case VariantName::L: return "L";
        case VariantName::XL: return "XL";
        case VariantName::XXL: return "XXL";
    }
    return "?";
}

std::string BackboneVariant::mit_name() const {
    switch (name) {
        case VariantName::Tiny: return "MiT-tiny";
        case VariantName::XS: return "MiT-B1";
        case VariantName::S: return "MiT-B2";
        case VariantName::L: return "MiT-B3";
        case VariantName::XL: return "MiT-B4";
        case VariantName::XXL: return "MiT-B5";
    }
    return "?";
}

Var tokens_to_map(const Var& tokens, std::int64_t h, std::int64_t w) {
    const std::int64_t b = tokens.size(0), c = tokens.size(2);
    if (tokens.size(1) != h * w) {
        throw Error("token count " + std::to_string(tokens.size(1)) + " does not match " +
                    std::to_string(h) + "x" + std::to_string(w));
    }
    return reshape(permute(tokens, {0, 2, 1}), {b, c, h, w});
}

Var map_to_tokens(const Var& map) {
    const std::int64_t b = map.size(0), c = map.size(1), h = map.size(2), w = map.size(3);
    return permute(reshape(map, {b, c, h * w}), {0, 2, 1});
}

OverlapPatchEmbed::OverlapPatchEmbed(Rng& rng, int in_channels, PatchEmbedConfig cfg_)
    : cfg(cfg_),
      proj(rng, in_channels, cfg_.out_channels, cfg_.kernel,
           Conv2dSpec{cfg_.stride, cfg_.padding, 1, 1}),
      norm(cfg_.out_channels) {
    if (cfg.stride >= cfg.kernel) {
        throw Error("patch embedding must overlap: stride " + std::to_string(cfg.stride) +
                    " >= kernel " + std::to_string(cfg.kernel));
    }
}

Tokens OverlapPatchEmbed::forward(const Var& x) const {
    Var y = proj.forward(x);  // throws if input smaller than kernel
    const std::int64_t h = y.size(2), w = y.size(3);
    return {norm.forward(map_to_tokens(y)), h, w};
}

void OverlapPatchEmbed::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    proj.visit_params(prefix + "proj.", fn);
    norm.visit_params(prefix + "norm.", fn);
}

EfficientSelfAttention::EfficientSelfAttention(Rng& rng, AttentionConfig cfg_)
    : cfg(cfg_),
      q(rng, cfg_.embed_dim, cfg_.embed_dim),
      k(rng, cfg_.embed_dim, cfg_.embed_dim),
      v(rng, cfg_.embed_dim, cfg_.embed_dim),
      proj(rng, cfg_.embed_dim, cfg_.embed_dim) {
    if (cfg.embed_dim % cfg.num_heads != 0) {
        throw Error("embed_dim must be divisible by num_heads");
    }
    if (cfg.reduction_ratio < 1) throw Error("reduction ratio must be >= 1");
    if (cfg.reduction_ratio > 1) {
        sr = std::make_unique<Conv2d>(rng, cfg.embed_dim, cfg.embed_dim, cfg.reduction_ratio,
                                      Conv2dSpec{cfg.reduction_ratio, 0, 1, 1});
        sr_norm = std::make_unique<LayerNorm>(cfg.embed_dim);
    }
}

std::int64_t EfficientSelfAttention::kv_tokens(std::int64_t h, std::int64_t w) const {
    if (cfg.reduction_ratio == 1) return h * w;
    const int r = cfg.reduction_ratio;
    return conv_out_dim(h, r, r, 0, 1) * conv_out_dim(w, r, r, 0, 1);
}

namespace {
// (B,N,C) -> (B*heads, N, C/heads)
Var split_heads(const Var& x, int heads) {
    const std::int64_t b = x.size(0), n = x.size(1), c = x.size(2);
    return reshape(permute(reshape(x, {b, n, heads, c / heads}), {0, 2, 1, 3}),
                   {b * heads, n, c / heads});
}

Var merge_heads(const Var& x, std::int64_t b, int heads) {
    const std::int64_t n = x.size(1), d = x.size(2);
    return reshape(permute(reshape(x, {b, heads, n, d}), {0, 2, 1, 3}), {b, n, heads * d});
}
}  // namespace

Var EfficientSelfAttention::forward(const Tokens& tokens) const {
    const std::int64_t b = tokens.t.size(0), n = tokens.t.size(1), c = tokens.t.size(2);
    if (n != tokens.h * tokens.w) {
        throw Error("attention: token count " + std::to_string(n) + " does not match spatial " +
                    std::to_string(tokens.h) + "x" + std::to_string(tokens.w));
    }
    Var kv_src = tokens.t;
    if (sr) {
        Var m = tokens_to_map(tokens.t, tokens.h, tokens.w);
        kv_src = sr_norm->forward(map_to_tokens(sr->forward(m)));
    }
    const int heads = cfg.num_heads;
    const std::int64_t d = c / heads;
    Var qh = split_heads(q.forward(tokens.t), heads);       // (B*h, N, d)
    Var kh = split_heads(k.forward(kv_src), heads);         // (B*h, M, d)
    Var vh = split_heads(v.forward(kv_src), heads);         // (B*h, M, d)
    Var attn = mul_scalar(bmm(qh, permute(kh, {0, 2, 1})), 1.0 / std::sqrt(static_cast<Scalar>(d)));
    attn = softmax_lastdim(attn);                           // rows sum to 1
    Var out = merge_heads(bmm(attn, vh), b, heads);
    return proj.forward(out);
}

void EfficientSelfAttention::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    q.visit_params(prefix + "q.", fn);
    k.visit_params(prefix + "k.", fn);
    v.visit_params(prefix + "v.", fn);
    proj.visit_params(prefix + "proj.", fn);
    if (sr) {
        sr->visit_params(prefix + "sr.", fn);
        sr_norm->visit_params(prefix + "sr_norm.", fn);
    }
}

MixFfn::MixFfn(Rng& rng, int channels, int ratio)
    : fc1(rng, channels, channels * ratio),
      dwconv(rng, channels * ratio, channels * ratio, 3,
             Conv2dSpec{1, 1, 1, channels * ratio}),
      fc2(rng, channels * ratio, channels) {}

Var MixFfn::forward(const Tokens& tokens) const {
    Var x = fc1.forward(tokens.t);
    Var m = tokens_to_map(x, tokens.h, tokens.w);  // throws on non-reshapeable token count
    m = dwconv.forward(m);
    x = gelu(map_to_tokens(m));
    return fc2.forward(x);
}

void MixFfn::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fc1.visit_params(prefix + "fc1.", fn);
    dwconv.visit_params(prefix + "dwconv.", fn);
    fc2.visit_params(prefix + "fc2.", fn);
}

MitBlock::MitBlock(Rng& rng, AttentionConfig cfg, int mlp_ratio)
    : norm1(cfg.embed_dim), attn(rng, cfg), norm2(cfg.embed_dim), ffn(rng, cfg.embed_dim, mlp_ratio) {}

Var MitBlock::forward(const Tokens& tokens) const {
    Var x = add(tokens.t, attn.forward({norm1.forward(tokens.t), tokens.h, tokens.w}));
    return add(x, ffn.forward({norm2.forward(x), tokens.h, tokens.w}));
}

void MitBlock::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    norm1.visit_params(prefix + "norm1.", fn);
    attn.visit_params(prefix + "attn.", fn);
    norm2.visit_params(prefix + "norm2.", fn);
    ffn.visit_params(prefix + "ffn.", fn);
}

MitStage::MitStage(Rng& rng, int in_channels, PatchEmbedConfig embed_cfg, AttentionConfig attn_cfg,
                   int depth, int mlp_ratio)
    : embed(rng, in_channels, embed_cfg), norm(embed_cfg.out_channels) {
    for (int i = 0; i < depth; ++i) {
        blocks.push_back(std::make_unique<MitBlock>(rng, attn_cfg, mlp_ratio));
    }
}

Tokens MitStage::forward(const Var& x) const {
    Tokens t = embed.forward(x);
    for (const auto& block : blocks) t.t = block->forward(t);
    t.t = norm.forward(t.t);
    return t;
}

void MitStage::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    embed.visit_params(prefix + "embed.", fn);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i]->visit_params(prefix + "block" + std::to_string(i) + ".", fn);
    }
    norm.visit_params(prefix + "norm.", fn);
}

MitEncoder::MitEncoder(Rng& rng, const BackboneVariant& variant_) : variant(variant_) {
    int in_ch = 3;
    for (int i = 0; i < 4; ++i) {
        const PatchEmbedConfig embed_cfg =
            i == 0 ? PatchEmbedConfig{7, 4, 3, variant.channels[0]}
                   : PatchEmbedConfig{3, 2, 1, variant.channels[i]};
        const AttentionConfig attn_cfg{variant.heads[i], variant.sr_ratios[i],
                                       variant.channels[i]};
        stages.push_back(std::make_unique<MitStage>(rng, in_ch, embed_cfg, attn_cfg,
                                                    variant.depths[i], variant.mlp_ratio));
        in_ch = variant.channels[i];
    }
}

FeaturePyramid MitEncoder::forward(const Var& x) const {
    if (x.dim() != 4 || x.size(1) != 3) {
        throw Error("encoder expects (B,3,H,W), got " + shape_str(x.shape()));
    }
    if (x.size(2) % 32 != 0 || x.size(3) % 32 != 0) {
        throw Error("encoder input size " + std::to_string(x.size(2)) + "x" +
                    std::to_string(x.size(3)) + " must be divisible by 32");
    }
    FeaturePyramid pyramid;
    Var cur = x;
    for (int i = 0; i < 4; ++i) {
        Tokens t = stages[i]->forward(cur);
        cur = tokens_to_map(t.t, t.h, t.w);
        pyramid[i] = cur;
    }
    return pyramid;
}

void MitEncoder::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < stages.size(); ++i) {
        stages[i]->visit_params(prefix + "stage" + std::to_string(i + 1) + ".", fn);
    }
}

}  // namespace colonformer
