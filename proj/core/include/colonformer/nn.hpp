#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "colonformer/autodiff.hpp"
#include "colonformer/common.hpp"

namespace colonformer {

using ParamVisitor = std::function<void(const std::string& name, Var& param)>;

/// Base for everything that owns trainable parameters. Parameters are reported
/// with hierarchical dotted names; visitation order is construction order and
/// is the canonical ordering for optimizer state.
class Module {
public:
    virtual ~Module() = default;
    virtual void visit_params(const std::string& prefix, const ParamVisitor& fn) = 0;

    std::vector<std::pair<std::string, Var>> named_params();
    std::vector<Var> params();
    std::int64_t parameter_count();
    void zero_grads();
};

class Linear : public Module {
public:
    Linear(Rng& rng, int in_features, int out_features, bool with_bias = true);

    /// x: (..., in_features) -> (..., out_features)
    Var forward(const Var& x) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    Var weight;  // (in_features, out_features)
    Var bias;    // (out_features) or undefined

private:
    int in_;
    int out_;
};

class Conv2d : public Module {
public:
    Conv2d(Rng& rng, int in_channels, int out_channels, int kernel, Conv2dSpec spec = {},
           bool with_bias = true);

    Var forward(const Var& x) const;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    Var weight;  // (out, in/groups, k, k)
    Var bias;    // (out) or undefined
    Conv2dSpec spec;
};

class LayerNorm : public Module {
public:
    LayerNorm(int features, Scalar eps = 1e-6);

    Var forward(const Var& x) const;  // normalizes the last dim
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    Var gamma;
    Var beta;
    Scalar eps;
};

// test helper: overwrite a parameter with a constant
void fill_param(Var& p, Scalar v);

}  // namespace colonformer
