#pragma once

#include <vector>

#include "scanet/tape.hpp"

namespace scanet {

struct AdamWOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-2;
};

/// Adaptive-moment optimizer with decoupled weight decay:
///   p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
/// where m_hat, v_hat are the bias-corrected first and second moments.
template <typename S>
class AdamW {
public:
    AdamW(ParameterSet<S>& params, AdamWOptions options);

    /// Applies one update from the current gradients. Throws Error(numeric)
    /// and leaves parameters and moments untouched if any gradient is
    /// non-finite.
    void step();

    long step_count() const { return step_; }
    double learning_rate() const { return options_.learning_rate; }
    void set_learning_rate(double lr) { options_.learning_rate = lr; }
    const AdamWOptions& options() const { return options_; }

    const Tensor<S>& first_moment(std::size_t i) const { return m_[i]; }
    const Tensor<S>& second_moment(std::size_t i) const { return v_[i]; }

private:
    ParameterSet<S>* params_;
    AdamWOptions options_;
    std::vector<Tensor<S>> m_, v_;
    long step_ = 0;
};

} // namespace scanet
