#include "colonformer/optim.hpp"

#include <cmath>

namespace colonformer {

Adam::Adam(std::vector<Var> params, Scalar beta1, Scalar beta2, Scalar eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
    }
}

void Adam::step(Scalar lr) {
    ++t_;
    const Scalar bc1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
    const Scalar bc2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) continue;
        const Scalar* g = params_[i].grad().data();
        Scalar* m = m_[i].data();
        Scalar* v = v_[i].data();
        Scalar* w = params_[i].node()->value.data();
        const std::int64_t n = params_[i].numel();
        for (std::int64_t j = 0; j < n; ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const Scalar mhat = m[j] / bc1;
            const Scalar vhat = v[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Scalar cosine_lr(Scalar base_lr, std::int64_t step, std::int64_t total_steps) {
    if (total_steps <= 1) return step <= 0 ? base_lr : 0.0;
    if (step >= total_steps - 1) return 0.0;
    const Scalar t = static_cast<Scalar>(step) / static_cast<Scalar>(total_steps - 1);
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace colonformer
