#pragma once

#include <memory>
#include <vector>

#include "colonformer/encoder.hpp"

namespace colonformer {

struct CFPConfig {
    std::vector<int> dilation_rates{1, 2, 4, 8};  // K = 4 branches, ascending
    int channels = 0;
};

/// K parallel dilated 3x3 branches over a reduced-width view of the input.
/// Branch outputs are accumulated progressively (prefix sums) before
/// concatenation to avoid gridding artifacts, projected back to the input
/// width and added residually.
class CfpModule : public Module {
public:
    CfpModule(Rng& rng, CFPConfig cfg);
    Var forward(const Var& x) const;
    /// raw branch outputs before progressive accumulation (exposed for tests)
    std::vector<Var> branch_outputs(const Var& x) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    CFPConfig cfg;
    Conv2d entry;                                  // 3x3, C -> C/4
    std::vector<std::unique_ptr<Conv2d>> branches; // 3x3 dilated, C/4 -> C/4
    Conv2d out_proj;                               // 1x1, C -> C
};

/// Single-head attention along one spatial axis: q/k at C/8 width, values at
/// full width, output projection C -> C. q/k/v read from `features`; the
/// attended result is returned un-projected for the caller to project+add.
class AxialAttention : public Module {
public:
    AxialAttention(Rng& rng, int channels, bool height_axis, bool learned_pos_bias = false,
                   int max_axis_len = 0);
    Var forward(const Var& features) const;  // (B,C,H,W) -> (B,C,H,W)
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    bool height_axis;
    Linear q, k, v, out;  // zeroing `out` silences this axis entirely
    Var pos_bias;         // (max_axis_len) additive attention-logit bias, optional

private:
    int channels_;
    bool learned_pos_bias_;
};

/// f' = f + Axial(f): height-axis then width-axis attention, each applied
/// residually onto the stream, with one shared linear 3x3 pre-convolution
/// feeding the height-axis q/k/v. Zeroing both output projections makes the
/// block an exact identity.
class ResidualAxialAttention : public Module {
public:
    ResidualAxialAttention(Rng& rng, int channels, bool learned_pos_bias = false,
                           int max_axis_len = 0);
    Var forward(const Var& f) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    Conv2d pre;  // 3x3, linear
    AxialAttention h_attn;
    AxialAttention w_attn;
};

/// Reverse attention with a residual axial-attention feature path:
///   A = 1 - sigmoid(resample(prior)); refined = head(A * axial(f)) + resample(prior)
/// The conv head is bias-free so saturated priors pass through exactly.
class RaRaBlock : public Module {
public:
    RaRaBlock(Rng& rng, int channels, int head_channels, bool learned_pos_bias = false,
              int max_axis_len = 0);
    Var forward(const Var& f_cfp, const Var& prior_logits) const;
    /// plain reverse attention: identical but with the axial path skipped
    Var forward_plain(const Var& f_cfp, const Var& prior_logits) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    ResidualAxialAttention axial;
    Conv2d head1, head2, head3;  // C->hc->hc->1, 3x3, no bias

private:
    Var refine(const Var& features, const Var& prior_logits) const;
};

/// Three RA-RA blocks over CFP-processed encoder stages 4, 3, 2; the global
/// map seeds the deepest block.
class RefinementModule : public Module {
public:
    RefinementModule(Rng& rng, const std::array<int, 4>& encoder_channels, int head_channels,
                     std::vector<int> cfp_dilations = {1, 2, 4, 8}, bool learned_pos_bias = false,
                     int max_axis_len = 0);

    /// returns refined logits at 1/32, 1/16, 1/8 (deepest first)
    std::array<Var, 3> forward(const FeaturePyramid& pyramid, const Var& global_map) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    std::array<std::unique_ptr<CfpModule>, 3> cfp;    // stages 2,3,4
    std::array<std::unique_ptr<RaRaBlock>, 3> ra;     // stages 2,3,4
};

}  // namespace colonformer
