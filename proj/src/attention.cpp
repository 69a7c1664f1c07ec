#include "scanet/attention.hpp"

#include "scanet/init.hpp"

#include <cmath>

namespace scanet {

const char* to_string(Variant v) {
    switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::sa: return "sa";
    case Variant::ca: return "ca";
    case Variant::sca: return "sca";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    for (Variant v : {Variant::baseline, Variant::sa, Variant::ca, Variant::sca})
        if (name == to_string(v)) return v;
    fail(ErrorKind::config, "unknown variant '" + name + "' (expected baseline|sa|ca|sca)");
}

void SCAConfig::validate(Index channels) const {
    require(cardinality >= 1 && radix >= 1 && reduction >= 1, ErrorKind::config,
            "cardinality, radix and reduction must be >= 1");
    require(channels % cardinality == 0, ErrorKind::config,
            "channels " + std::to_string(channels) + " not divisible by cardinality " + std::to_string(cardinality));
    require((channels / cardinality) % reduction == 0, ErrorKind::config,
            "group width " + std::to_string(channels / cardinality) + " not divisible by reduction " +
                std::to_string(reduction));
}

SCAConfig BlockSpec::effective() const {
    SCAConfig c = sca;
    if (variant == Variant::ca) {
        c.cardinality = 1;
        c.radix = 1;
    }
    return c;
}

template <typename S>
std::vector<Var<S>> make_feature_groups(Var<S> x, Var<S> weight, Var<S> bias, const SCAConfig& config, int stride) {
    const int groups = config.groups();
    require(weight.dim(0) % groups == 0, ErrorKind::config, "feature-group weight rows not divisible by K*R");
    const Index group_width = weight.dim(0) / groups;
    auto u = relu(conv2d(x, weight, bias, {stride, 1, groups, PadMode::replicate}));
    std::vector<Var<S>> out;
    out.reserve(groups);
    for (int i = 0; i < groups; ++i) out.push_back(slice_channels(u, i * group_width, group_width));
    return out;
}

template <typename S>
Var<S> cardinal_group_sum(const std::vector<Var<S>>& splits) {
    if (splits.size() == 1) return splits[0];
    return add_n(splits);
}

template <typename S>
Var<S> strip_descriptor(Var<S> group_sum) {
    auto [sh, sw] = directional_avg_pool(group_sum);
    return concat_strip(sh, sw);
}

template <typename S>
Var<S> strip_transform(Var<S> descriptor, const SplitVars<S>& split, Activation act) {
    auto t = pointwise(descriptor, split.strip_weight, split.strip_bias);
    if (split.norm_gamma) t = channel_norm(t, *split.norm_gamma, *split.norm_beta);
    return activation(t, act);
}

template <typename S>
Var<S> attention_strip(Var<S> group_sum, const SplitVars<S>& split, Activation act) {
    return strip_transform(strip_descriptor(group_sum), split, act);
}

template <typename S>
std::pair<Var<S>, Var<S>> directional_gates(Var<S> strip, Index h, const SplitVars<S>& split) {
    auto [th, tw] = split_strip(strip, h);
    return {sigmoid(pointwise(th, split.gate_h_weight, split.gate_h_bias)),
            sigmoid(pointwise(tw, split.gate_w_weight, split.gate_w_bias))};
}

template <typename S>
Var<S> fuse(Var<S> group_sum, const std::vector<Var<S>>& gates_h, const std::vector<Var<S>>& gates_w) {
    return coordinate_fuse(group_sum, gates_h, gates_w);
}

template <typename S>
AttentionBlock<S>::AttentionBlock(const std::string& prefix, const BlockSpec& spec, ParameterSet<S>& params,
                                  SplitMix64& rng)
    : prefix_(prefix), spec_(spec) {
    const SCAConfig cfg = spec.effective();
    const Index c = spec.channels, cin = spec.in_channels;
    cfg.validate(c);
    require(spec.stride == 1 || spec.stride == 2, ErrorKind::config, prefix + ": stride must be 1 or 2");
    require(cin % cfg.groups() == 0, ErrorKind::config,
            prefix + ": input channels " + std::to_string(cin) + " not divisible by K*R = " +
                std::to_string(cfg.groups()));
    const Index cin_g = cin / cfg.groups();
    const Index cpk = c / cfg.cardinality;
    const Index reduced = cpk / cfg.reduction;

    group_weight = &params.add(prefix + ".group.weight",
                               fan_in_uniform<S>(Shape{cfg.radix * c, cin_g, 3, 3}, cin_g * 9, kReluGain, rng));
    group_bias = &params.add(prefix + ".group.bias", Tensor<S>(Shape{cfg.radix * c}));

    if (spec.variant != Variant::baseline) {
        const int sets = cfg.share_splits ? 1 : cfg.radix;
        for (int i = 0; i < sets; ++i) {
            const std::string sp = prefix + ".split" + std::to_string(i);
            SplitParams<S> s;
            const bool is_sa = spec.variant == Variant::sa;
            const char* squeeze = is_sa ? ".bottleneck" : ".strip";
            s.strip_weight = &params.add(sp + squeeze + ".weight",
                                         fan_in_uniform<S>(Shape{reduced, cpk}, cpk, kReluGain, rng));
            s.strip_bias = &params.add(sp + squeeze + ".bias", Tensor<S>(Shape{reduced}));
            if (!is_sa && cfg.strip_norm) {
                s.norm_gamma = &params.add(sp + ".strip.norm.gamma", Tensor<S>::constant(Shape{reduced}, S(1)));
                s.norm_beta = &params.add(sp + ".strip.norm.beta", Tensor<S>(Shape{reduced}));
            }
            const char* expand = is_sa ? ".expand" : ".gate_h";
            s.gate_h_weight = &params.add(sp + expand + ".weight",
                                          fan_in_uniform<S>(Shape{cpk, reduced}, reduced, 1.0, rng));
            s.gate_h_bias = &params.add(sp + expand + ".bias", Tensor<S>(Shape{cpk}));
            if (!is_sa) {
                s.gate_w_weight = &params.add(sp + ".gate_w.weight",
                                              fan_in_uniform<S>(Shape{cpk, reduced}, reduced, 1.0, rng));
                s.gate_w_bias = &params.add(sp + ".gate_w.bias", Tensor<S>(Shape{cpk}));
            }
            splits.push_back(s);
        }
    }

    if (!spec.identity_shortcut()) {
        shortcut_weight =
            &params.add(prefix + ".shortcut.weight", fan_in_uniform<S>(Shape{c, cin, 1, 1}, cin, 1.0, rng));
        shortcut_gamma = &params.add(prefix + ".shortcut.gamma", Tensor<S>::constant(Shape{c}, S(1)));
        shortcut_beta = &params.add(prefix + ".shortcut.beta", Tensor<S>(Shape{c}));
    }
}

template <typename S>
SplitVars<S> AttentionBlock<S>::bind_split(Tape<S>& tape, int split) const {
    const SplitParams<S>& p = splits[splits.size() == 1 ? 0 : split];
    SplitVars<S> v;
    v.strip_weight = tape.param(*p.strip_weight);
    v.strip_bias = tape.param(*p.strip_bias);
    if (p.norm_gamma) {
        v.norm_gamma = tape.param(*p.norm_gamma);
        v.norm_beta = tape.param(*p.norm_beta);
    }
    v.gate_h_weight = tape.param(*p.gate_h_weight);
    v.gate_h_bias = tape.param(*p.gate_h_bias);
    if (p.gate_w_weight) {
        v.gate_w_weight = tape.param(*p.gate_w_weight);
        v.gate_w_bias = tape.param(*p.gate_w_bias);
    }
    return v;
}

template <typename S>
Var<S> AttentionBlock<S>::forward(Tape<S>& tape, Var<S> x) const {
    require(x.dim(1) == spec_.in_channels, ErrorKind::shape,
            prefix_ + ": expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                std::to_string(x.dim(1)));
    const SCAConfig cfg = spec_.effective();
    const int k_groups = cfg.cardinality, radix = cfg.radix;

    auto u = make_feature_groups(x, tape.param(*group_weight), tape.param(*group_bias), cfg, spec_.stride);

    std::vector<SplitVars<S>> bound;
    if (spec_.variant != Variant::baseline) {
        const int sets = int(splits.size());
        for (int i = 0; i < sets; ++i) bound.push_back(bind_split(tape, i));
        // Shared parameters are bound once and reused by every split.
        while (int(bound.size()) < radix) bound.push_back(bound[0]);
    }

    std::vector<Var<S>> cardinal;
    for (int k = 0; k < k_groups; ++k) {
        std::vector<Var<S>> members(u.begin() + k * radix, u.begin() + (k + 1) * radix);
        auto group_sum = cardinal_group_sum(members);
        switch (spec_.variant) {
        case Variant::baseline:
            cardinal.push_back(group_sum);
            break;
        case Variant::sa: {
            auto pooled = global_avg_pool(group_sum);
            std::vector<Var<S>> gates;
            for (int i = 0; i < radix; ++i) {
                auto z = relu(dense(pooled, bound[i].strip_weight, bound[i].strip_bias));
                gates.push_back(sigmoid(dense(z, bound[i].gate_h_weight, bound[i].gate_h_bias)));
            }
            cardinal.push_back(channel_fuse(group_sum, gates));
            break;
        }
        case Variant::ca:
        case Variant::sca: {
            auto descriptor = strip_descriptor(group_sum);
            const Index h = group_sum.dim(2);
            std::vector<Var<S>> gh, gw;
            for (int i = 0; i < radix; ++i) {
                auto strip = strip_transform(descriptor, bound[i], cfg.strip_activation);
                auto [uh, uw] = directional_gates(strip, h, bound[i]);
                gh.push_back(uh);
                gw.push_back(uw);
            }
            cardinal.push_back(fuse(group_sum, gh, gw));
            break;
        }
        }
    }
    auto v = k_groups == 1 ? cardinal[0] : concat_channels(cardinal);

    Var<S> shortcut = x;
    if (shortcut_weight) {
        shortcut = conv2d(x, tape.param(*shortcut_weight), std::nullopt, {spec_.stride, 0, 1, PadMode::zeros});
        shortcut = channel_affine(shortcut, tape.param(*shortcut_gamma), tape.param(*shortcut_beta));
    }
    auto y = add(v, shortcut);
    require(y.value().vec().allFinite(), ErrorKind::numeric, prefix_ + ": non-finite activation in block output");
    return y;
}

Index gate_pair_param_count(Index group_channels, int reduction) {
    const Index reduced = group_channels / reduction;
    return 2 * (reduced * group_channels + group_channels);
}

Index block_param_count(const BlockSpec& spec) {
    const SCAConfig cfg = spec.effective();
    const Index c = spec.channels, cin = spec.in_channels;
    const Index cpk = c / cfg.cardinality, reduced = cpk / cfg.reduction;
    Index n = cfg.radix * c * (cin / cfg.groups()) * 9 + cfg.radix * c;
    const Index sets = cfg.share_splits ? 1 : cfg.radix;
    switch (spec.variant) {
    case Variant::baseline: break;
    case Variant::sa: n += sets * ((reduced * cpk + reduced) + (cpk * reduced + cpk)); break;
    case Variant::ca:
    case Variant::sca:
        n += sets * ((reduced * cpk + reduced) + (cfg.strip_norm ? 2 * reduced : 0) +
                     gate_pair_param_count(cpk, cfg.reduction));
        break;
    }
    if (!spec.identity_shortcut()) n += c * cin + 2 * c;
    return n;
}

#define SCANET_INSTANTIATE_ATTENTION(S)                                                                      \
    template std::vector<Var<S>> make_feature_groups(Var<S>, Var<S>, Var<S>, const SCAConfig&, int);        \
    template Var<S> cardinal_group_sum(const std::vector<Var<S>>&);                                         \
    template Var<S> strip_descriptor(Var<S>);                                                               \
    template Var<S> strip_transform(Var<S>, const SplitVars<S>&, Activation);                               \
    template Var<S> attention_strip(Var<S>, const SplitVars<S>&, Activation);                               \
    template std::pair<Var<S>, Var<S>> directional_gates(Var<S>, Index, const SplitVars<S>&);               \
    template Var<S> fuse(Var<S>, const std::vector<Var<S>>&, const std::vector<Var<S>>&);                   \
    template class AttentionBlock<S>;

SCANET_INSTANTIATE_ATTENTION(float)
SCANET_INSTANTIATE_ATTENTION(double)

} // namespace scanet
