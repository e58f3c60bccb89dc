#pragma once

#include <vector>

#include "colonformer/autodiff.hpp"

namespace colonformer {

/// Adam with the usual (0.9, 0.999) betas and no weight decay.
class Adam {
public:
    explicit Adam(std::vector<Var> params, Scalar beta1 = 0.9, Scalar beta2 = 0.999,
                  Scalar eps = 1e-8);

    void step(Scalar lr);
    void zero_grad();

private:
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    Scalar beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

/// Monotone cosine decay from base_lr at step 0 to exactly 0 at the last step.
Scalar cosine_lr(Scalar base_lr, std::int64_t step, std::int64_t total_steps);

}  // namespace colonformer
