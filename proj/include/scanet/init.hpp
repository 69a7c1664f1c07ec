#pragma once

#include <cmath>

#include "scanet/rng.hpp"
#include "scanet/tensor.hpp"

namespace scanet {

inline constexpr double kReluGain = 1.4142135623730951;

/// Uniform on [-b, b] with b = gain * sqrt(3 / fan_in).
template <typename S>
Tensor<S> fan_in_uniform(const Shape& shape, Index fan_in, double gain, SplitMix64& rng) {
    const double bound = gain * std::sqrt(3.0 / double(fan_in));
    Tensor<S> t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = S(rng.uniform(-bound, bound));
    return t;
}

} // namespace scanet
