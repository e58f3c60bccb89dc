#include "colonformer/refinement.hpp"

#include <cmath>

namespace colonformer {

CfpModule::CfpModule(Rng& rng, CFPConfig cfg_)
    : cfg(std::move(cfg_)),
      entry(rng, cfg.channels, cfg.channels / 4, 3, Conv2dSpec{1, 1, 1, 1}),
      out_proj(rng, cfg.channels, cfg.channels, 1) {
    if (cfg.channels % 4 != 0) throw Error("CFP: channels must be divisible by 4");
    if (cfg.dilation_rates.size() != 4) throw Error("CFP: expected K=4 branches");
    for (std::size_t i = 0; i + 1 < cfg.dilation_rates.size(); ++i) {
        if (cfg.dilation_rates[i] >= cfg.dilation_rates[i + 1]) {
            throw Error("CFP: dilation rates must be ascending");
        }
    }
    const int width = cfg.channels / 4;
    for (int d : cfg.dilation_rates) {
        branches.push_back(
            std::make_unique<Conv2d>(rng, width, width, 3, Conv2dSpec{1, d, d, 1}));
    }
}

std::vector<Var> CfpModule::branch_outputs(const Var& x) const {
    Var e = relu(entry.forward(x));
    std::vector<Var> outs;
    outs.reserve(branches.size());
    for (const auto& b : branches) outs.push_back(relu(b->forward(e)));
    return outs;
}

Var CfpModule::forward(const Var& x) const {
    if (x.size(1) != cfg.channels) {
        throw Error("CFP: expected " + std::to_string(cfg.channels) + " channels, got " +
                    shape_str(x.shape()));
    }
    std::vector<Var> bs = branch_outputs(x);
    std::vector<Var> prefix;
    prefix.reserve(bs.size());
    Var running = bs[0];
    prefix.push_back(running);
    for (std::size_t j = 1; j < bs.size(); ++j) {
        running = add(running, bs[j]);
        prefix.push_back(running);
    }
    return add(out_proj.forward(concat(prefix, 1)), x);
}

void CfpModule::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    entry.visit_params(prefix + "entry.", fn);
    for (std::size_t i = 0; i < branches.size(); ++i) {
        branches[i]->visit_params(prefix + "branch" + std::to_string(i) + ".", fn);
    }
    out_proj.visit_params(prefix + "out.", fn);
}

AxialAttention::AxialAttention(Rng& rng, int channels, bool height_axis_, bool learned_pos_bias,
                               int max_axis_len)
    : height_axis(height_axis_),
      q(rng, channels, std::max(1, channels / 8)),
      k(rng, channels, std::max(1, channels / 8)),
      v(rng, channels, channels),
      out(rng, channels, channels),
      channels_(channels),
      learned_pos_bias_(learned_pos_bias) {
    if (learned_pos_bias_) {
        if (max_axis_len <= 0) throw Error("axial attention: positional bias needs max_axis_len");
        pos_bias = Var(Tensor(Shape{max_axis_len}), true);
    }
}

Var AxialAttention::forward(const Var& features) const {
    const std::int64_t b = features.size(0), c = features.size(1);
    const std::int64_t h = features.size(2), w = features.size(3);
    // rows = sequences along the chosen axis, channels last
    // height axis: (B,C,H,W) -> (B,W,H,C); width axis: -> (B,H,W,C)
    Var seq = height_axis ? permute(features, {0, 3, 2, 1}) : permute(features, {0, 2, 3, 1});
    const std::int64_t groups = height_axis ? b * w : b * h;
    const std::int64_t len = height_axis ? h : w;
    seq = reshape(seq, {groups, len, c});

    const std::int64_t dk = std::max<std::int64_t>(1, c / 8);
    Var qs = q.forward(seq);
    Var ks = k.forward(seq);
    Var vs = v.forward(seq);
    Var logits = mul_scalar(bmm(qs, permute(ks, {0, 2, 1})),
                            1.0 / std::sqrt(static_cast<Scalar>(dk)));
    if (learned_pos_bias_) {
        // fixed-size additive bias over key positions
        if (pos_bias.numel() != len) {
            throw Error("axial attention: positional bias table length " +
                        std::to_string(pos_bias.numel()) + " does not match axis length " +
                        std::to_string(len));
        }
        logits = add(logits, reshape(pos_bias, {1, 1, len}));
    }
    Var attn = softmax_lastdim(logits);
    Var ctx = out.forward(bmm(attn, vs));  // (groups, len, C)
    ctx = reshape(ctx, height_axis ? Shape{b, w, h, c} : Shape{b, h, w, c});
    return height_axis ? permute(ctx, {0, 3, 2, 1}) : permute(ctx, {0, 3, 1, 2});
}

void AxialAttention::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    q.visit_params(prefix + "q.", fn);
    k.visit_params(prefix + "k.", fn);
    v.visit_params(prefix + "v.", fn);
    out.visit_params(prefix + "out.", fn);
    if (pos_bias.defined()) fn(prefix + "pos_bias", pos_bias);
}

ResidualAxialAttention::ResidualAxialAttention(Rng& rng, int channels, bool learned_pos_bias,
                                               int max_axis_len)
    : pre(rng, channels, channels, 3, Conv2dSpec{1, 1, 1, 1}),
      h_attn(rng, channels, /*height_axis=*/true, learned_pos_bias, max_axis_len),
      w_attn(rng, channels, /*height_axis=*/false, learned_pos_bias, max_axis_len) {}

Var ResidualAxialAttention::forward(const Var& f) const {
    Var t = pre.forward(f);              // linear smoothing feeds the first axis
    Var u = add(f, h_attn.forward(t));   // height pass onto the stream
    return add(u, w_attn.forward(u));    // width pass reads the updated stream
}

void ResidualAxialAttention::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    pre.visit_params(prefix + "pre.", fn);
    h_attn.visit_params(prefix + "h.", fn);
    w_attn.visit_params(prefix + "w.", fn);
}

RaRaBlock::RaRaBlock(Rng& rng, int channels, int head_channels, bool learned_pos_bias,
                     int max_axis_len)
    : axial(rng, channels, learned_pos_bias, max_axis_len),
      head1(rng, channels, head_channels, 3, Conv2dSpec{1, 1, 1, 1}, /*with_bias=*/false),
      head2(rng, head_channels, head_channels, 3, Conv2dSpec{1, 1, 1, 1}, /*with_bias=*/false),
      head3(rng, head_channels, 1, 3, Conv2dSpec{1, 1, 1, 1}, /*with_bias=*/false) {}

Var RaRaBlock::refine(const Var& features, const Var& prior_logits) const {
    const std::int64_t h = features.size(2), w = features.size(3);
    Var prior = prior_logits;
    if (prior.size(2) != h || prior.size(3) != w) prior = resize_bilinear(prior, h, w);
    Var attention = 1.0 - sigmoid(prior);       // (B,1,h,w), erases confident regions
    Var masked = mul(attention, features);      // broadcast over channels
    Var residual = head3.forward(relu(head2.forward(relu(head1.forward(masked)))));
    return add(residual, prior);
}

Var RaRaBlock::forward(const Var& f_cfp, const Var& prior_logits) const {
    return refine(axial.forward(f_cfp), prior_logits);
}

Var RaRaBlock::forward_plain(const Var& f_cfp, const Var& prior_logits) const {
    return refine(f_cfp, prior_logits);
}

void RaRaBlock::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    axial.visit_params(prefix + "axial.", fn);
    head1.visit_params(prefix + "head1.", fn);
    head2.visit_params(prefix + "head2.", fn);
    head3.visit_params(prefix + "head3.", fn);
}

RefinementModule::RefinementModule(Rng& rng, const std::array<int, 4>& encoder_channels,
                                   int head_channels, std::vector<int> cfp_dilations,
                                   bool learned_pos_bias, int max_axis_len) {
    // blocks tap encoder stages 2, 3, 4 (indices 1..3); stage 1 is not refined
    for (int i = 0; i < 3; ++i) {
        const int c = encoder_channels[static_cast<std::size_t>(i + 1)];
        cfp[static_cast<std::size_t>(i)] =
            std::make_unique<CfpModule>(rng, CFPConfig{cfp_dilations, c});
        ra[static_cast<std::size_t>(i)] = std::make_unique<RaRaBlock>(
            rng, c, head_channels, learned_pos_bias, max_axis_len);
    }
}

std::array<Var, 3> RefinementModule::forward(const FeaturePyramid& pyramid,
                                             const Var& global_map) const {
    std::array<Var, 3> refined;  // deepest first: 1/32, 1/16, 1/8
    Var prior = global_map;
    for (int s = 2; s >= 0; --s) {  // s=2 -> stage 4, s=0 -> stage 2
        Var f = cfp[static_cast<std::size_t>(s)]->forward(pyramid[s + 1]);
        prior = ra[static_cast<std::size_t>(s)]->forward(f, prior);
        refined[static_cast<std::size_t>(2 - s)] = prior;
    }
    return refined;
}

void RefinementModule::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    for (int i = 0; i < 3; ++i) {
        const std::string stage = std::to_string(i + 2);
        cfp[static_cast<std::size_t>(i)]->visit_params(prefix + "cfp" + stage + ".", fn);
        ra[static_cast<std::size_t>(i)]->visit_params(prefix + "ra" + stage + ".", fn);
    }
}

}  // namespace colonformer
