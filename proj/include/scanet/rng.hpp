#pragma once

#include <cstdint>

namespace scanet {

// SplitMix64 (Steele, Lea, Flood 2014). State advances by the golden-ratio
// increment; output is the 64-bit finalizer of the new state. Integer-only,
// so every stream is identical on every platform.
class SplitMix64 {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t next() {
        state_ += kGamma;
        return mix(state_);
    }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive. Multiply-shift reduction.
    std::int64_t integer(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<unsigned __int128>(hi - lo + 1);
        return lo + static_cast<std::int64_t>((span * next()) >> 64);
    }

    // Irwin-Hall approximation of a standard normal (sum of 12 uniforms - 6).
    // Uses only additions so it is bit-stable without libm.
    double normal() {
        double acc = 0.0;
        for (int i = 0; i < 12; ++i) acc += uniform();
        return acc - 6.0;
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

// Child seed i of a parent seed; children of one parent never collide for
// distinct i because mix() is a bijection.
constexpr std::uint64_t split_seed(std::uint64_t parent, std::uint64_t index) {
    return SplitMix64::mix(SplitMix64::mix(parent) + (index + 1) * SplitMix64::kGamma);
}

} // namespace scanet
