#include "scanet/gradcheck_suite.hpp"

#include <functional>

#include "scanet/attention.hpp"
#include "scanet/gradcheck.hpp"
#include "scanet/seg_model.hpp"

namespace scanet {

namespace {

using Vars = std::vector<Var<double>>;
using CheckFn = std::function<double(SplitMix64&, double)>;

TensorD rnd(const Shape& s, SplitMix64& rng, double lo = -1, double hi = 1) {
    TensorD t(s);
    for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Random rank-4 extents small enough for exhaustive central differences.
struct Dims {
    Index n, c, h, w;
    Shape s4() const { return Shape{n, c, h, w}; }
};

Dims draw(SplitMix64& rng) {
    return {rng.integer(1, 2), rng.integer(1, 4), rng.integer(2, 6), rng.integer(2, 6)};
}

// Graph whose scalar output is a random projection of `op(vars)`.
double projected(const std::function<Var<double>(const Vars&)>& op, const std::vector<TensorD>& inputs, SplitMix64& rng,
                 double eps) {
    Shape out_shape;
    {
        Tape<double> probe;
        Vars v;
        for (const auto& x : inputs) v.push_back(probe.constant(x));
        out_shape = op(v).shape();
    }
    const TensorD proj = rnd(out_shape, rng);
    return check_graph_gradients<double>(
        [&](Tape<double>&, const Vars& v) { return weighted_sum(op(v), proj); }, inputs, eps);
}

CheckFn conv_check(PadMode mode) {
    return [mode](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        const int groups = int(rng.integer(1, 2)), stride = int(rng.integer(1, 2));
        const Index k = rng.integer(0, 1) ? 3 : 1, pad = k / 2;
        const Index cin = d.c * groups, cout = groups * rng.integer(1, 3);
        const Conv2dOptions o{stride, int(pad), groups, mode};
        return projected([&](const Vars& v) { return conv2d(v[0], v[1], v[2], o); },
                         {rnd(Shape{d.n, cin, d.h + 1, d.w + 1}, rng), rnd(Shape{cout, d.c, k, k}, rng), rnd(Shape{cout}, rng)},
                         rng, eps);
    };
}

std::vector<std::pair<std::string, CheckFn>> primitive_checks() {
    std::vector<std::pair<std::string, CheckFn>> items;
    items.emplace_back("conv2d_zeros", conv_check(PadMode::zeros));
    items.emplace_back("conv2d_replicate", conv_check(PadMode::replicate));
    items.emplace_back("dense", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        const Index out = rng.integer(1, 4);
        return projected([](const Vars& v) { return dense(v[0], v[1], v[2]); },
                         {rnd(Shape{d.n, d.c, d.h}, rng), rnd(Shape{out, d.h}, rng), rnd(Shape{out}, rng)}, rng, eps);
    });
    items.emplace_back("pointwise", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        const Index out = rng.integer(1, 4);
        return projected([](const Vars& v) { return pointwise(v[0], v[1], v[2]); },
                         {rnd(d.s4(), rng), rnd(Shape{out, d.c}, rng), rnd(Shape{out}, rng)}, rng, eps);
    });
    items.emplace_back("relu", [](SplitMix64& rng, double eps) {
        return projected([](const Vars& v) { return relu(v[0]); }, {rnd(draw(rng).s4(), rng)}, rng, eps);
    });
    items.emplace_back("sigmoid", [](SplitMix64& rng, double eps) {
        return projected([](const Vars& v) { return sigmoid(v[0]); }, {rnd(draw(rng).s4(), rng, -6, 6)}, rng, eps);
    });
    items.emplace_back("global_avg_pool", [](SplitMix64& rng, double eps) {
        return projected([](const Vars& v) { return global_avg_pool(v[0]); }, {rnd(draw(rng).s4(), rng)}, rng, eps);
    });
    items.emplace_back("row_mean", [](SplitMix64& rng, double eps) {
        return projected([](const Vars& v) { return row_mean(v[0]); }, {rnd(draw(rng).s4(), rng)}, rng, eps);
    });
    items.emplace_back("col_mean", [](SplitMix64& rng, double eps) {
        return projected([](const Vars& v) { return col_mean(v[0]); }, {rnd(draw(rng).s4(), rng)}, rng, eps);
    });
    items.emplace_back("concat_strip", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        return projected([](const Vars& v) { return concat_strip(v[0], v[1]); },
                         {rnd(Shape{d.n, d.c, d.h}, rng), rnd(Shape{d.n, d.c, d.w}, rng)}, rng, eps);
    });
    items.emplace_back("split_strip", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        const TensorD ph = rnd(Shape{d.n, d.c, d.h}, rng), pw = rnd(Shape{d.n, d.c, d.w}, rng);
        return check_graph_gradients<double>(
            [&](Tape<double>&, const Vars& v) {
                auto [a, b] = split_strip(v[0], d.h);
                return add(weighted_sum(a, ph), weighted_sum(b, pw));
            },
            {rnd(Shape{d.n, d.c, d.h + d.w}, rng)}, eps);
    });
    items.emplace_back("slice_last", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        const Index off = rng.integer(0, d.w - 1), cnt = rng.integer(1, d.w - off);
        return projected([=](const Vars& v) { return slice_last(v[0], off, cnt); }, {rnd(Shape{d.n, d.c, d.w}, rng)}, rng,
                         eps);
    });
    items.emplace_back("slice_channels", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        const Index off = rng.integer(0, d.c - 1), cnt = rng.integer(1, d.c - off);
        return projected([=](const Vars& v) { return slice_channels(v[0], off, cnt); }, {rnd(d.s4(), rng)}, rng, eps);
    });
    items.emplace_back("concat_channels", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        return projected([](const Vars& v) { return concat_channels<double>({v[0], v[1], v[2]}); },
                         {rnd(d.s4(), rng), rnd(Shape{d.n, 2, d.h, d.w}, rng), rnd(d.s4(), rng)}, rng, eps);
    });
    items.emplace_back("channel_norm", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        return projected([](const Vars& v) { return channel_norm(v[0], v[1], v[2]); },
                         {rnd(Shape{d.n, d.c, d.h + d.w}, rng), rnd(Shape{d.c}, rng), rnd(Shape{d.c}, rng)}, rng, eps);
    });
    items.emplace_back("channel_affine", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        return projected([](const Vars& v) { return channel_affine(v[0], v[1], v[2]); },
                         {rnd(d.s4(), rng), rnd(Shape{d.c}, rng), rnd(Shape{d.c}, rng)}, rng, eps);
    });
    items.emplace_back("add", [](SplitMix64& rng, double eps) {
        const Shape s = draw(rng).s4();
        return projected([](const Vars& v) { return add(v[0], v[1]); }, {rnd(s, rng), rnd(s, rng)}, rng, eps);
    });
    items.emplace_back("add_n", [](SplitMix64& rng, double eps) {
        const Shape s = draw(rng).s4();
        return projected([](const Vars& v) { return add_n(v); }, {rnd(s, rng), rnd(s, rng), rnd(s, rng)}, rng, eps);
    });
    items.emplace_back("mul", [](SplitMix64& rng, double eps) {
        const Shape s = draw(rng).s4();
        return projected([](const Vars& v) { return mul(v[0], v[1]); }, {rnd(s, rng), rnd(s, rng)}, rng, eps);
    });
    items.emplace_back("coordinate_fuse", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        const int r = int(rng.integer(1, 3));
        std::vector<TensorD> in{rnd(d.s4(), rng)};
        for (int i = 0; i < r; ++i) in.push_back(rnd(Shape{d.n, d.c, d.h}, rng, 0.05, 0.95));
        for (int i = 0; i < r; ++i) in.push_back(rnd(Shape{d.n, d.c, d.w}, rng, 0.05, 0.95));
        return projected([r](const Vars& v) {
            return coordinate_fuse(v[0], Vars(v.begin() + 1, v.begin() + 1 + r), Vars(v.begin() + 1 + r, v.end()));
        }, in, rng, eps);
    });
    items.emplace_back("channel_fuse", [](SplitMix64& rng, double eps) {
        const Dims d = draw(rng);
        const int r = int(rng.integer(1, 3));
        std::vector<TensorD> in{rnd(d.s4(), rng)};
        for (int i = 0; i < r; ++i) in.push_back(rnd(Shape{d.n, d.c}, rng));
        return projected([](const Vars& v) { return channel_fuse(v[0], Vars(v.begin() + 1, v.end())); }, in, rng, eps);
    });
    items.emplace_back("upsample2x", [](SplitMix64& rng, double eps) {
        return projected([](const Vars& v) { return upsample2x(v[0]); }, {rnd(draw(rng).s4(), rng)}, rng, eps);
    });
    items.emplace_back("sum", [](SplitMix64& rng, double eps) {
        return check_graph_gradients<double>([](Tape<double>&, const Vars& v) { return sum(v[0]); },
                                             {rnd(draw(rng).s4(), rng)}, eps);
    });
    items.emplace_back("weighted_sum", [](SplitMix64& rng, double eps) {
        const Shape s = draw(rng).s4();
        const TensorD w = rnd(s, rng);
        return check_graph_gradients<double>([&](Tape<double>&, const Vars& v) { return weighted_sum(v[0], w); },
                                             {rnd(s, rng)}, eps);
    });
    return items;
}

double loss_check(SplitMix64& rng, double eps) {
    const Dims d = draw(rng);
    const Shape s{d.n, 1, d.h, d.w};
    TensorD target(s);
    for (Index i = 0; i < target.size(); ++i) target[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    return check_graph_gradients<double>([&](Tape<double>&, const Vars& v) { return bce_dice_loss(v[0], target); },
                                         {rnd(s, rng, -3, 3)}, eps);
}

double block_check(Variant variant, SplitMix64& rng, double eps) {
    BlockSpec spec;
    spec.variant = variant;
    spec.in_channels = 8;
    spec.stride = int(rng.integer(1, 2));
    spec.channels = rng.integer(0, 1) ? 8 : 16;
    spec.sca.cardinality = 2;
    spec.sca.radix = 2;
    spec.sca.reduction = 2;
    ParameterSet<double> params;
    AttentionBlock<double> block("block", spec, params, rng);
    for (auto& p : params)
        for (Index i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-0.8, 0.8);
    const TensorD x = rnd(Shape{rng.integer(1, 2), 8, rng.integer(3, 6), rng.integer(3, 6)}, rng);
    Tape<double> probe;
    const TensorD proj = rnd(block.forward(probe, probe.constant(x)).shape(), rng);
    double worst = 0;
    for (const auto& r : check_model_gradients<double>(
             params, [&](Tape<double>& t, Var<double> in) { return weighted_sum(block.forward(t, in), proj); }, x, eps))
        worst = std::max(worst, r.worst);
    return worst;
}

} // namespace

const std::vector<std::string>& gradcheck_primitive_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [name, fn] : primitive_checks()) out.push_back(name);
        return out;
    }();
    return names;
}

std::vector<GradcheckItem> run_gradcheck_suite(const GradcheckOptions& options) {
    std::vector<std::tuple<std::string, std::string, CheckFn>> all;
    for (auto& [name, fn] : primitive_checks()) all.emplace_back(name, "primitive", fn);
    all.emplace_back("bce_dice_loss", "loss", loss_check);
    for (Variant v : {Variant::baseline, Variant::sa, Variant::ca, Variant::sca})
        all.emplace_back(std::string(to_string(v)) + "_block", "block",
                         [v](SplitMix64& rng, double eps) { return block_check(v, rng, eps); });

    std::vector<GradcheckItem> out;
    for (std::size_t k = 0; k < all.size(); ++k) {
        const auto& [name, kind, fn] = all[k];
        SplitMix64 rng(split_seed(options.seed, k));
        GradcheckItem item{name, kind, 0, 0.0, false};
        for (int s = 0; s < options.shapes; ++s) {
            item.worst = std::max(item.worst, fn(rng, options.eps));
            ++item.shapes;
        }
        item.passed = item.worst < options.tolerance;
        out.push_back(item);
    }
    return out;
}

} // namespace scanet
