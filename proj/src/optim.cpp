#include "scanet/optim.hpp"

#include <cmath>

namespace scanet {

template <typename S>
AdamW<S>::AdamW(ParameterSet<S>& params, AdamWOptions options) : params_(&params), options_(options) {
    for (const auto& p : params) {
        m_.emplace_back(p.value.shape());
        v_.emplace_back(p.value.shape());
    }
}

template <typename S>
void AdamW<S>::step() {
    std::size_t i = 0;
    for (const auto& p : *params_) {
        require(p.grad.vec().allFinite(), ErrorKind::numeric,
                "non-finite gradient in parameter '" + p.name + "' at step " + std::to_string(step_ + 1));
        ++i;
    }
    ++step_;
    const auto& o = options_;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
    const S b1 = S(o.beta1), b2 = S(o.beta2);
    const S decay = S(1.0 - o.learning_rate * o.weight_decay);
    const S step_size = S(o.learning_rate / bc1);
    const S inv_sqrt_bc2 = S(1.0 / std::sqrt(bc2));
    const S eps = S(o.epsilon);
    i = 0;
    for (auto& p : *params_) {
        auto& m = m_[i].vec();
        auto& v = v_[i].vec();
        const auto& g = p.grad.vec();
        m = b1 * m + (S(1) - b1) * g;
        v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
        auto& w = p.value.vec();
        w *= decay;
        w.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
        ++i;
    }
}

template class AdamW<float>;
template class AdamW<double>;

} // namespace scanet
