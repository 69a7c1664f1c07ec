#pragma once

#include <string>
#include <vector>

#include "scanet/ops.hpp"
#include "scanet/rng.hpp"

namespace scanet {

enum class Variant { baseline, sa, ca, sca };

const char* to_string(Variant v);
Variant parse_variant(const std::string& name);

/// Split coordinate attention hyper-parameters. G = K * R feature groups.
struct SCAConfig {
    int cardinality = 2;  // K
    int radix = 2;        // R
    int reduction = 4;    // r, width reduction of the strip transform
    Activation strip_activation = Activation::relu;
    bool strip_norm = true;
    bool share_splits = false;  // one strip transform / gate set for all splits

    int groups() const { return cardinality * radix; }

    /// Throws Error(config) unless channels % K == 0 and (channels / K) % r == 0.
    void validate(Index channels) const;

    bool operator==(const SCAConfig&) const = default;
};

/// Shape of one residual attention block.
struct BlockSpec {
    Variant variant = Variant::sca;
    Index in_channels = 0;
    Index channels = 0;  // C, the block output width
    int stride = 1;
    SCAConfig sca{};

    /// Config actually used by the block: CA is the K = R = 1 special case.
    SCAConfig effective() const;
    bool identity_shortcut() const { return in_channels == channels && stride == 1; }
};

/// Learnable tensors of one split i (strip transform G_i and directional
/// gates S^h_i, S^w_i for SCA; bottleneck and expansion for SA).
template <typename S>
struct SplitParams {
    Parameter<S>* strip_weight = nullptr;  // [C/(K r), C/K]
    Parameter<S>* strip_bias = nullptr;
    Parameter<S>* norm_gamma = nullptr;    // present when strip_norm is on
    Parameter<S>* norm_beta = nullptr;
    Parameter<S>* gate_h_weight = nullptr; // [C/K, C/(K r)]
    Parameter<S>* gate_h_bias = nullptr;
    Parameter<S>* gate_w_weight = nullptr; // SCA only
    Parameter<S>* gate_w_bias = nullptr;
};

/// Per-split variables bound on a tape.
template <typename S>
struct SplitVars {
    Var<S> strip_weight, strip_bias;
    std::optional<Var<S>> norm_gamma, norm_beta;
    Var<S> gate_h_weight, gate_h_bias;
    Var<S> gate_w_weight, gate_w_bias;
};

// Stages of the attention computation, usable on their own.

/// U_1..U_G from one grouped convolution (+ ReLU) with G groups; U_i is the
/// channel range [i*C/K, (i+1)*C/K) of the convolution output.
template <typename S>
std::vector<Var<S>> make_feature_groups(Var<S> x, Var<S> weight, Var<S> bias, const SCAConfig& config,
                                        int stride);

/// Elementwise sum of the R splits of one cardinal group, ascending order.
template <typename S>
Var<S> cardinal_group_sum(const std::vector<Var<S>>& splits);

/// [row means ++ column means] of Û^k: [N, C/K, H+W].
template <typename S>
Var<S> strip_descriptor(Var<S> group_sum);

/// 1x1 convolution (+ optional normalisation) + activation on a strip.
template <typename S>
Var<S> strip_transform(Var<S> descriptor, const SplitVars<S>& split, Activation act);

/// strip_transform(strip_descriptor(Û^k)).
template <typename S>
Var<S> attention_strip(Var<S> group_sum, const SplitVars<S>& split, Activation act);

/// Splits the strip at `h` and maps each part back to C/K channels through
/// sigmoid-activated dense maps: (u^h [N,C/K,H], u^w [N,C/K,W]).
template <typename S>
std::pair<Var<S>, Var<S>> directional_gates(Var<S> strip, Index h, const SplitVars<S>& split);

/// V^k = Û^k * sum_i u^h_i (x) u^w_i.
template <typename S>
Var<S> fuse(Var<S> group_sum, const std::vector<Var<S>>& gates_h, const std::vector<Var<S>>& gates_w);

/// Residual block Y = Concat(V^1..V^K) + T(X) with the attention variant
/// selected by BlockSpec::variant.
template <typename S>
class AttentionBlock {
public:
    AttentionBlock(const std::string& prefix, const BlockSpec& spec, ParameterSet<S>& params, SplitMix64& rng);

    Var<S> forward(Tape<S>& tape, Var<S> x) const;

    /// Binds the parameters of split `split` on `tape`.
    SplitVars<S> bind_split(Tape<S>& tape, int split) const;

    const BlockSpec& spec() const { return spec_; }
    const std::string& name() const { return prefix_; }

    Parameter<S>* group_weight = nullptr;  // [R*C, Cin/G, 3, 3]
    Parameter<S>* group_bias = nullptr;
    std::vector<SplitParams<S>> splits;    // R entries (1 when shared); empty for baseline
    Parameter<S>* shortcut_weight = nullptr;  // [C, Cin, 1, 1], null for identity
    Parameter<S>* shortcut_gamma = nullptr;
    Parameter<S>* shortcut_beta = nullptr;

private:
    std::string prefix_;
    BlockSpec spec_;
};

/// Learnable scalars of one block, by formula.
Index block_param_count(const BlockSpec& spec);

/// Learnable scalars of one split's dense gate pair (S^h and S^w).
Index gate_pair_param_count(Index group_channels, int reduction);

} // namespace scanet
