#include "colonformer/nn.hpp"

#include <cmath>

namespace colonformer {

std::vector<std::pair<std::string, Var>> Module::named_params() {
    std::vector<std::pair<std::string, Var>> out;
    visit_params("", [&](const std::string& name, Var& p) { out.emplace_back(name, p); });
    return out;
}

std::vector<Var> Module::params() {
    std::vector<Var> out;
    visit_params("", [&](const std::string&, Var& p) { out.push_back(p); });
    return out;
}

std::int64_t Module::parameter_count() {
    std::int64_t n = 0;
    visit_params("", [&](const std::string&, Var& p) { n += p.numel(); });
    return n;
}

void Module::zero_grads() {
    visit_params("", [&](const std::string&, Var& p) { p.zero_grad(); });
}

Linear::Linear(Rng& rng, int in_features, int out_features, bool with_bias)
    : in_(in_features), out_(out_features) {
    Tensor w(Shape{in_features, out_features});
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.trunc_normal(0.02);
    weight = Var(std::move(w), true);
    if (with_bias) bias = Var(Tensor(Shape{out_features}), true);
}

Var Linear::forward(const Var& x) const {
    if (x.size(-1) != in_) {
        throw Error("Linear: expected last dim " + std::to_string(in_) + ", got " +
                    shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape.back() = out_;
    const std::int64_t rows = x.numel() / in_;
    Var y = matmul(reshape(x, {rows, in_}), weight);
    if (bias.defined()) y = add(y, bias);
    return reshape(y, std::move(out_shape));
}

void Linear::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "weight", weight);
    if (bias.defined()) fn(prefix + "bias", bias);
}

Conv2d::Conv2d(Rng& rng, int in_channels, int out_channels, int kernel, Conv2dSpec spec_,
               bool with_bias)
    : spec(spec_) {
    Tensor w(Shape{out_channels, in_channels / spec.groups, kernel, kernel});
    // Kaiming normal, fan-out
    const Scalar fan_out =
        static_cast<Scalar>(out_channels) * kernel * kernel / static_cast<Scalar>(spec.groups);
    const Scalar stddev = std::sqrt(2.0 / fan_out);
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, stddev);
    weight = Var(std::move(w), true);
    if (with_bias) bias = Var(Tensor(Shape{out_channels}), true);
}

Var Conv2d::forward(const Var& x) const { return conv2d(x, weight, bias, spec); }

void Conv2d::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "weight", weight);
    if (bias.defined()) fn(prefix + "bias", bias);
}

LayerNorm::LayerNorm(int features, Scalar eps_) : eps(eps_) {
    gamma = Var(Tensor(Shape{features}, 1.0), true);
    beta = Var(Tensor(Shape{features}), true);
}

Var LayerNorm::forward(const Var& x) const { return layer_norm_lastdim(x, gamma, beta, eps); }

void LayerNorm::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "gamma", gamma);
    fn(prefix + "beta", beta);
}

void fill_param(Var& p, Scalar v) { p.node()->value.fill_(v); }

}  // namespace colonformer
