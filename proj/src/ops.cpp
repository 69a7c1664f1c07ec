#include "scanet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace scanet {

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstRowMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using StridedMap = Eigen::Map<RowMat<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using ConstStridedMap = Eigen::Map<const RowMat<S>, 0, Eigen::OuterStride<>>;

constexpr Index kColumnBudget = Index(1) << 17;

std::string dims_msg(const char* op, const std::string& what) { return std::string(op) + ": " + what; }

// Product of extents after axis 1 (the "positions" of a channel).
Index trailing(const Shape& s) {
    Index n = 1;
    for (int i = 2; i < s.rank(); ++i) n *= s[i];
    return n;
}

struct ConvGeom {
    Index n, cin, h, w, cout, kh, kw, ho, wo, groups, cin_g, cout_g, kdim, p;
    Index stride, pad;
    PadMode mode;
};

// Returns the source coordinate for padded position `i` or -1 for a zero pad.
inline Index pad_index(Index i, Index extent, PadMode mode) {
    if (i >= 0 && i < extent) return i;
    if (mode == PadMode::zeros) return -1;
    return std::clamp<Index>(i, 0, extent - 1);
}

// Source index along one axis for every output index at kernel offset k (-1
// for a zero pad). Inside [lo, hi) the source is o * stride + off.
struct AxisMap {
    std::vector<Index> src;
    Index lo = 0, hi = 0, off = 0;
};

AxisMap axis_map(Index out, Index in, Index stride, Index pad, Index k, PadMode mode) {
    AxisMap m;
    m.src.resize(out);
    m.off = k - pad;
    m.lo = out;
    for (Index o = 0; o < out; ++o) {
        const Index i = o * stride + m.off;
        m.src[o] = pad_index(i, in, mode);
        if (i >= 0 && i < in) {
            m.lo = std::min(m.lo, o);
            m.hi = o + 1;
        }
    }
    if (m.lo >= m.hi) m.lo = m.hi = 0;
    return m;
}

struct ConvMaps {
    std::vector<AxisMap> y, x;
    explicit ConvMaps(const ConvGeom& g) {
        for (Index k = 0; k < g.kh; ++k) y.push_back(axis_map(g.ho, g.h, g.stride, g.pad, k, g.mode));
        for (Index k = 0; k < g.kw; ++k) x.push_back(axis_map(g.wo, g.w, g.stride, g.pad, k, g.mode));
    }
};

// A block of output positions handled by one GEMM: either whole samples
// [n0, n0 + nb) or the output rows [oy0, oy0 + rows) of the single sample n0.
struct ConvChunk {
    Index n0, nb, oy0, rows;
    Index cols(const ConvGeom& g) const { return nb * rows * g.wo; }
};

std::vector<ConvChunk> conv_chunks(const ConvGeom& g, Index budget) {
    std::vector<ConvChunk> out;
    const Index per_row = std::max<Index>(1, g.kdim * g.wo);
    if (per_row * g.ho <= budget) {
        const Index nb = std::clamp<Index>(budget / (per_row * g.ho), 1, g.n);
        for (Index n0 = 0; n0 < g.n; n0 += nb) out.push_back({n0, std::min(nb, g.n - n0), 0, g.ho});
    } else {
        const Index rows = std::clamp<Index>(budget / per_row, 1, g.ho);
        for (Index n = 0; n < g.n; ++n)
            for (Index oy0 = 0; oy0 < g.ho; oy0 += rows) out.push_back({n, 1, oy0, std::min(rows, g.ho - oy0)});
    }
    return out;
}

// Columns of one chunk for one group: [kdim, chunk.cols].
template <typename S>
void im2col(const S* x, const ConvGeom& g, const ConvMaps& maps, Index group, const ConvChunk& ch, RowMat<S>& col) {
    const Index span = ch.rows * g.wo;
    col.resize(g.kdim, ch.nb * span);
    for (Index ci = 0; ci < g.cin_g; ++ci) {
        const Index c = group * g.cin_g + ci;
        for (Index ky = 0; ky < g.kh; ++ky) {
            const AxisMap& my = maps.y[ky];
            for (Index kx = 0; kx < g.kw; ++kx) {
                const AxisMap& mx = maps.x[kx];
                S* dst = &col((ci * g.kh + ky) * g.kw + kx, 0);
                for (Index n = 0; n < ch.nb; ++n) {
                    const S* xc = x + ((ch.n0 + n) * g.cin + c) * g.h * g.w;
                    S* out = dst + n * span;
                    for (Index r = 0; r < ch.rows; ++r) {
                        const Index iy = my.src[ch.oy0 + r];
                        S* row = out + r * g.wo;
                        if (iy < 0) {
                            std::fill(row, row + g.wo, S(0));
                            continue;
                        }
                        const S* xr = xc + iy * g.w;
                        for (Index ox = 0; ox < mx.lo; ++ox) row[ox] = mx.src[ox] < 0 ? S(0) : xr[mx.src[ox]];
                        if (g.stride == 1) {
                            std::copy(xr + mx.lo + mx.off, xr + mx.hi + mx.off, row + mx.lo);
                        } else {
                            for (Index ox = mx.lo; ox < mx.hi; ++ox) row[ox] = xr[ox * g.stride + mx.off];
                        }
                        for (Index ox = mx.hi; ox < g.wo; ++ox) row[ox] = mx.src[ox] < 0 ? S(0) : xr[mx.src[ox]];
                    }
                }
            }
        }
    }
}

template <typename S>
void col2im_add(const RowMat<S>& col, const ConvGeom& g, const ConvMaps& maps, Index group, const ConvChunk& ch,
                S* gx) {
    const Index span = ch.rows * g.wo;
    for (Index ci = 0; ci < g.cin_g; ++ci) {
        const Index c = group * g.cin_g + ci;
        for (Index ky = 0; ky < g.kh; ++ky) {
            const AxisMap& my = maps.y[ky];
            for (Index kx = 0; kx < g.kw; ++kx) {
                const AxisMap& mx = maps.x[kx];
                const S* src = &col((ci * g.kh + ky) * g.kw + kx, 0);
                for (Index n = 0; n < ch.nb; ++n) {
                    S* xc = gx + ((ch.n0 + n) * g.cin + c) * g.h * g.w;
                    const S* in = src + n * span;
                    for (Index r = 0; r < ch.rows; ++r) {
                        const Index iy = my.src[ch.oy0 + r];
                        if (iy < 0) continue;
                        S* xr = xc + iy * g.w;
                        const S* row = in + r * g.wo;
                        for (Index ox = 0; ox < mx.lo; ++ox)
                            if (mx.src[ox] >= 0) xr[mx.src[ox]] += row[ox];
                        for (Index ox = mx.lo; ox < mx.hi; ++ox) xr[ox * g.stride + mx.off] += row[ox];
                        for (Index ox = mx.hi; ox < g.wo; ++ox)
                            if (mx.src[ox] >= 0) xr[mx.src[ox]] += row[ox];
                    }
                }
            }
        }
    }
}

// Elementwise logistic through Eigen packets, clamped into the open interval (0, 1).
template <typename S>
Eigen::Array<S, Eigen::Dynamic, 1> logistic(const Eigen::Matrix<S, Eigen::Dynamic, 1>& v) {
    constexpr S lo = std::numeric_limits<S>::min();
    constexpr S hi = S(1) - std::numeric_limits<S>::epsilon() / 2;
    const auto x = v.array();
    const Eigen::Array<S, Eigen::Dynamic, 1> e = (-x.abs()).exp();
    return (x >= S(0)).select(S(1) / (S(1) + e), e / (S(1) + e)).max(lo).min(hi);
}

template <typename S>
void check_same_shape(const char* op, Var<S> a, Var<S> b) {
    require(a.shape() == b.shape(), ErrorKind::shape,
            dims_msg(op, "shape " + a.shape().str() + " vs " + b.shape().str()));
}

} // namespace

template <typename S>
Var<S> conv2d(Var<S> input, Var<S> weight, NoDeduce<std::optional<Var<S>>> bias, const Conv2dOptions& opt) {
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    require(xs.rank() == 4, ErrorKind::shape, dims_msg("conv2d", "input must be rank 4, got " + xs.str()));
    require(ws.rank() == 4, ErrorKind::shape, dims_msg("conv2d", "weight must be rank 4, got " + ws.str()));
    require(opt.stride >= 1, ErrorKind::shape, dims_msg("conv2d", "stride must be >= 1"));
    require(opt.pad >= 0, ErrorKind::shape, dims_msg("conv2d", "pad must be >= 0"));
    require(opt.groups >= 1 && xs[1] % opt.groups == 0, ErrorKind::shape,
            dims_msg("conv2d", "input channels " + std::to_string(xs[1]) + " not divisible by groups " +
                                   std::to_string(opt.groups)));
    require(ws[0] % opt.groups == 0, ErrorKind::shape,
            dims_msg("conv2d", "output channels " + std::to_string(ws[0]) + " not divisible by groups"));
    require(ws[1] == xs[1] / opt.groups, ErrorKind::shape,
            dims_msg("conv2d", "weight in-channels " + std::to_string(ws[1]) + " != input channels / groups " +
                                   std::to_string(xs[1] / opt.groups)));
    const Index ho_num = xs[2] + 2 * opt.pad - ws[2];
    const Index wo_num = xs[3] + 2 * opt.pad - ws[3];
    require(ho_num >= 0, ErrorKind::shape, dims_msg("conv2d", "kernel height exceeds padded input height"));
    require(wo_num >= 0, ErrorKind::shape, dims_msg("conv2d", "kernel width exceeds padded input width"));
    if (bias)
        require(bias->shape().rank() == 1 && bias->shape()[0] == ws[0], ErrorKind::shape,
                dims_msg("conv2d", "bias must have shape [" + std::to_string(ws[0]) + "]"));

    ConvGeom g{};
    g.n = xs[0];
    g.cin = xs[1];
    g.h = xs[2];
    g.w = xs[3];
    g.cout = ws[0];
    g.kh = ws[2];
    g.kw = ws[3];
    g.stride = opt.stride;
    g.pad = opt.pad;
    g.ho = ho_num / opt.stride + 1;
    g.wo = wo_num / opt.stride + 1;
    g.groups = opt.groups;
    g.cin_g = g.cin / g.groups;
    g.cout_g = g.cout / g.groups;
    g.kdim = g.cin_g * g.kh * g.kw;
    g.p = g.ho * g.wo;
    g.mode = opt.pad_mode;

    // Column buffers are kept around kColumnBudget elements so they stay in cache.
    const std::vector<ConvChunk> chunks = conv_chunks(g, kColumnBudget);

    auto out = Tensor<S>::uninitialized(Shape{g.n, g.cout, g.ho, g.wo});
    const S* x = input.value().data();
    const S* wdata = weight.value().data();
    const ConvMaps maps(g);
    RowMat<S> col, y;
    for (const ConvChunk& ch : chunks) {
        const Index span = ch.rows * g.wo;
        for (Index grp = 0; grp < g.groups; ++grp) {
            im2col(x, g, maps, grp, ch, col);
            ConstRowMap<S> wg(wdata + grp * g.cout_g * g.kdim, g.cout_g, g.kdim);
            S* base = out.data() + (ch.n0 * g.cout + grp * g.cout_g) * g.p + ch.oy0 * g.wo;
            if (ch.nb == 1) {
                StridedMap<S> dst(base, g.cout_g, span, Eigen::OuterStride<>(g.p));
                dst.noalias() = wg * col;
            } else {
                y.noalias() = wg * col;
                for (Index n = 0; n < ch.nb; ++n)
                    RowMap<S>(base + n * g.cout * g.p, g.cout_g, g.p) = y.middleCols(n * g.p, g.p);
            }
        }
    }
    if (bias) {
        const S* b = bias->value().data();
        for (Index n = 0; n < g.n; ++n)
            for (Index c = 0; c < g.cout; ++c) {
                S* dst = out.data() + (n * g.cout + c) * g.p;
                const S bc = b[c];
                for (Index q = 0; q < g.p; ++q) dst[q] += bc;
            }
    }

    Tape<S>& tape = *input.tape;
    std::vector<Var<S>> inputs{input, weight};
    if (bias) inputs.push_back(*bias);
    return tape.record(std::move(out), inputs, [=](Tape<S>& t, const Tensor<S>& gy) {
        const bool need_x = t.needs_grad(input);
        const bool need_w = t.needs_grad(weight);
        const bool need_b = bias && t.needs_grad(*bias);
        if (need_b) {
            Tensor<S>& gb = t.grad_acc(*bias);
            for (Index c = 0; c < g.cout; ++c) {
                S acc = 0;
                for (Index n = 0; n < g.n; ++n) {
                    const S* row = gy.data() + (n * g.cout + c) * g.p;
                    for (Index q = 0; q < g.p; ++q) acc += row[q];
                }
                gb[c] += acc;
            }
        }
        if (!need_x && !need_w) return;
        const ConvMaps maps(g);
        const S* x = t.value(input).data();
        S* gx = need_x ? t.grad_acc(input).data() : nullptr;
        RowMat<S> col, dy, dcol;
        for (const ConvChunk& ch : chunks) {
            const Index span = ch.rows * g.wo;
            for (Index grp = 0; grp < g.groups; ++grp) {
                const S* base = gy.data() + (ch.n0 * g.cout + grp * g.cout_g) * g.p + ch.oy0 * g.wo;
                if (ch.nb > 1) {
                    dy.resize(g.cout_g, ch.nb * g.p);
                    for (Index n = 0; n < ch.nb; ++n)
                        dy.middleCols(n * g.p, g.p) = ConstRowMap<S>(base + n * g.cout * g.p, g.cout_g, g.p);
                }
                ConstStridedMap<S> dyv(ch.nb > 1 ? dy.data() : base, g.cout_g, ch.nb * span,
                                       Eigen::OuterStride<>(ch.nb > 1 ? ch.nb * g.p : g.p));
                if (need_w) {
                    im2col(x, g, maps, grp, ch, col);
                    RowMap<S> gw(t.grad_acc(weight).data() + grp * g.cout_g * g.kdim, g.cout_g, g.kdim);
                    gw.noalias() += dyv * col.transpose();
                }
                if (need_x) {
                    ConstRowMap<S> wg(t.value(weight).data() + grp * g.cout_g * g.kdim, g.cout_g, g.kdim);
                    dcol.noalias() = wg.transpose() * dyv;
                    col2im_add(dcol, g, maps, grp, ch, gx);
                }
            }
        }
    });
}

template <typename S>
Var<S> dense(Var<S> input, Var<S> weight, Var<S> bias) {
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    require(ws.rank() == 2, ErrorKind::shape, dims_msg("dense", "weight must be rank 2"));
    require(xs.rank() >= 1 && xs.back() == ws[1], ErrorKind::shape,
            dims_msg("dense", "last input extent " + std::to_string(xs.back()) + " != weight in-features " +
                                  std::to_string(ws[1])));
    require(bias.shape().rank() == 1 && bias.shape()[0] == ws[0], ErrorKind::shape,
            dims_msg("dense", "bias must have shape [" + std::to_string(ws[0]) + "]"));
    const Index cin = ws[1], cout = ws[0], m = xs.numel() / cin;
    Tensor<S> out(xs.with(xs.rank() - 1, cout));
    {
        ConstRowMap<S> x(input.value().data(), m, cin);
        ConstRowMap<S> w(weight.value().data(), cout, cin);
        RowMap<S> y(out.data(), m, cout);
        y.noalias() = x * w.transpose();
        y.rowwise() += bias.value().vec().transpose();
    }
    return input.tape->record(std::move(out), {input, weight, bias}, [=](Tape<S>& t, const Tensor<S>& gy) {
        ConstRowMap<S> dy(gy.data(), m, cout);
        if (t.needs_grad(input)) {
            ConstRowMap<S> w(t.value(weight).data(), cout, cin);
            RowMap<S>(t.grad_acc(input).data(), m, cin).noalias() += dy * w;
        }
        if (t.needs_grad(weight)) {
            ConstRowMap<S> x(t.value(input).data(), m, cin);
            RowMap<S>(t.grad_acc(weight).data(), cout, cin).noalias() += dy.transpose() * x;
        }
        if (t.needs_grad(bias)) {
            Tensor<S>& gb = t.grad_acc(bias);
            for (Index r = 0; r < m; ++r)
                for (Index c = 0; c < cout; ++c) gb[c] += dy(r, c);
        }
    });
}

template <typename S>
Var<S> pointwise(Var<S> input, Var<S> weight, NoDeduce<std::optional<Var<S>>> bias) {
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    require(xs.rank() >= 2, ErrorKind::shape, dims_msg("pointwise", "input must have a channel axis"));
    require(ws.rank() == 2 && ws[1] == xs[1], ErrorKind::shape,
            dims_msg("pointwise", "input channels " + std::to_string(xs[1]) + " != weight in-features"));
    if (bias)
        require(bias->shape().rank() == 1 && bias->shape()[0] == ws[0], ErrorKind::shape,
                dims_msg("pointwise", "bias must have shape [" + std::to_string(ws[0]) + "]"));
    const Index n = xs[0], cin = ws[1], cout = ws[0], l = trailing(xs);
    Tensor<S> out(xs.with(1, cout));
    ConstRowMap<S> w(weight.value().data(), cout, cin);
    for (Index b = 0; b < n; ++b) {
        ConstRowMap<S> x(input.value().data() + b * cin * l, cin, l);
        RowMap<S> y(out.data() + b * cout * l, cout, l);
        y.noalias() = w * x;
        if (bias) y.colwise() += bias->value().vec();
    }
    std::vector<Var<S>> inputs{input, weight};
    if (bias) inputs.push_back(*bias);
    return input.tape->record(std::move(out), inputs, [=](Tape<S>& t, const Tensor<S>& gy) {
        ConstRowMap<S> wv(t.value(weight).data(), cout, cin);
        for (Index b = 0; b < n; ++b) {
            ConstRowMap<S> dy(gy.data() + b * cout * l, cout, l);
            if (t.needs_grad(input))
                RowMap<S>(t.grad_acc(input).data() + b * cin * l, cin, l).noalias() += wv.transpose() * dy;
            if (t.needs_grad(weight)) {
                ConstRowMap<S> x(t.value(input).data() + b * cin * l, cin, l);
                RowMap<S>(t.grad_acc(weight).data(), cout, cin).noalias() += dy * x.transpose();
            }
            if (bias && t.needs_grad(*bias)) {
                Tensor<S>& gb = t.grad_acc(*bias);
                for (Index c = 0; c < cout; ++c) {
                    S acc = 0;
                    for (Index q = 0; q < l; ++q) acc += dy(c, q);
                    gb[c] += acc;
                }
            }
        }
    });
}

template <typename S>
Var<S> relu(Var<S> x) {
    auto out = Tensor<S>::uninitialized(x.shape());
    out.vec() = x.value().vec().cwiseMax(S(0));
    return x.tape->record(std::move(out), {x}, [=](Tape<S>& t, const Tensor<S>& gy) {
        const auto& xv = t.value(x).vec();
        auto& gx = t.grad_acc(x).vec();
        gx.array() += (xv.array() > S(0)).select(gy.vec().array(), S(0));
    });
}

template <typename S>
Var<S> sigmoid(Var<S> x) {
    auto out = Tensor<S>::uninitialized(x.shape());
    const auto& xv = x.value().vec();
    out.vec() = logistic(xv).matrix();
    // The rule recomputes y from x instead of holding on to the output.
    return x.tape->record(std::move(out), {x}, [=](Tape<S>& t, const Tensor<S>& gy) {
        const auto& xs = t.value(x).vec();
        auto& gx = t.grad_acc(x).vec();
        const auto y = logistic(xs);
        gx.array() += gy.vec().array() * y * (S(1) - y);
    });
}

template <typename S>
Var<S> activation(Var<S> x, Activation kind) {
    switch (kind) {
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::identity: return x;
    }
    return x;
}

template <typename S>
Var<S> global_avg_pool(Var<S> x) {
    const Shape& s = x.shape();
    require(s.rank() == 4, ErrorKind::shape, dims_msg("global_avg_pool", "input must be rank 4"));
    const Index nc = s[0] * s[1], hw = s[2] * s[3];
    Tensor<S> out(Shape{s[0], s[1]});
    const S* xv = x.value().data();
    for (Index i = 0; i < nc; ++i) {
        S acc = 0;
        for (Index q = 0; q < hw; ++q) acc += xv[i * hw + q];
        out[i] = acc / S(hw);
    }
    return x.tape->record(std::move(out), {x}, [=](Tape<S>& t, const Tensor<S>& gy) {
        S* gx = t.grad_acc(x).data();
        for (Index i = 0; i < nc; ++i) {
            const S g = gy[i] / S(hw);
            for (Index q = 0; q < hw; ++q) gx[i * hw + q] += g;
        }
    });
}

template <typename S>
Var<S> row_mean(Var<S> x) {
    const Shape& s = x.shape();
    require(s.rank() == 4, ErrorKind::shape, dims_msg("row_mean", "input must be rank 4"));
    const Index rows = s[0] * s[1] * s[2], w = s[3];
    Tensor<S> out(Shape{s[0], s[1], s[2]});
    const S* xv = x.value().data();
    for (Index r = 0; r < rows; ++r) {
        S acc = 0;
        for (Index j = 0; j < w; ++j) acc += xv[r * w + j];
        out[r] = acc / S(w);
    }
    return x.tape->record(std::move(out), {x}, [=](Tape<S>& t, const Tensor<S>& gy) {
        S* gx = t.grad_acc(x).data();
        for (Index r = 0; r < rows; ++r) {
            const S g = gy[r] / S(w);
            for (Index j = 0; j < w; ++j) gx[r * w + j] += g;
        }
    });
}

template <typename S>
Var<S> col_mean(Var<S> x) {
    const Shape& s = x.shape();
    require(s.rank() == 4, ErrorKind::shape, dims_msg("col_mean", "input must be rank 4"));
    const Index nc = s[0] * s[1], h = s[2], w = s[3];
    Tensor<S> out(Shape{s[0], s[1], s[3]});
    const S* xv = x.value().data();
    for (Index i = 0; i < nc; ++i) {
        for (Index j = 0; j < w; ++j) {
            S acc = 0;
            for (Index r = 0; r < h; ++r) acc += xv[(i * h + r) * w + j];
            out[i * w + j] = acc / S(h);
        }
    }
    return x.tape->record(std::move(out), {x}, [=](Tape<S>& t, const Tensor<S>& gy) {
        S* gx = t.grad_acc(x).data();
        for (Index i = 0; i < nc; ++i)
            for (Index r = 0; r < h; ++r)
                for (Index j = 0; j < w; ++j) gx[(i * h + r) * w + j] += gy[i * w + j] / S(h);
    });
}

template <typename S>
std::pair<Var<S>, Var<S>> directional_avg_pool(Var<S> x) {
    return {row_mean(x), col_mean(x)};
}

template <typename S>
Var<S> concat_strip(Var<S> sh, Var<S> sw) {
    const Shape& a = sh.shape();
    const Shape& b = sw.shape();
    require(a.rank() == 3 && b.rank() == 3, ErrorKind::shape, dims_msg("concat_strip", "inputs must be rank 3"));
    require(a[0] == b[0], ErrorKind::shape, dims_msg("concat_strip", "batch extent mismatch"));
    require(a[1] == b[1], ErrorKind::shape, dims_msg("concat_strip", "channel extent mismatch"));
    const Index rows = a[0] * a[1], h = a[2], w = b[2];
    Tensor<S> out(Shape{a[0], a[1], h + w});
    for (Index r = 0; r < rows; ++r) {
        std::copy_n(sh.value().data() + r * h, h, out.data() + r * (h + w));
        std::copy_n(sw.value().data() + r * w, w, out.data() + r * (h + w) + h);
    }
    return sh.tape->record(std::move(out), {sh, sw}, [=](Tape<S>& t, const Tensor<S>& gy) {
        if (t.needs_grad(sh)) {
            S* g = t.grad_acc(sh).data();
            for (Index r = 0; r < rows; ++r)
                for (Index j = 0; j < h; ++j) g[r * h + j] += gy[r * (h + w) + j];
        }
        if (t.needs_grad(sw)) {
            S* g = t.grad_acc(sw).data();
            for (Index r = 0; r < rows; ++r)
                for (Index j = 0; j < w; ++j) g[r * w + j] += gy[r * (h + w) + h + j];
        }
    });
}

template <typename S>
Var<S> slice_last(Var<S> x, Index offset, Index count) {
    const Shape& s = x.shape();
    require(s.rank() >= 1, ErrorKind::shape, dims_msg("slice_last", "input must have rank >= 1"));
    const Index len = s.back();
    require(offset >= 0 && count >= 1 && offset + count <= len, ErrorKind::shape,
            dims_msg("slice_last", "range [" + std::to_string(offset) + "," + std::to_string(offset + count) +
                                       ") outside extent " + std::to_string(len)));
    const Index rows = s.numel() / len;
    Tensor<S> out(s.with(s.rank() - 1, count));
    for (Index r = 0; r < rows; ++r) std::copy_n(x.value().data() + r * len + offset, count, out.data() + r * count);
    return x.tape->record(std::move(out), {x}, [=](Tape<S>& t, const Tensor<S>& gy) {
        S* g = t.grad_acc(x).data();
        for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < count; ++j) g[r * len + offset + j] += gy[r * count + j];
    });
}

template <typename S>
std::pair<Var<S>, Var<S>> split_strip(Var<S> strip, Index h) {
    const Shape& s = strip.shape();
    require(s.rank() == 3, ErrorKind::shape, dims_msg("split_strip", "input must be rank 3"));
    require(h >= 1 && h < s[2], ErrorKind::shape,
            dims_msg("split_strip", "split point " + std::to_string(h) + " outside (0," + std::to_string(s[2]) + ")"));
    return {slice_last(strip, 0, h), slice_last(strip, h, s[2] - h)};
}

template <typename S>
Var<S> slice_channels(Var<S> x, Index offset, Index count) {
    const Shape& s = x.shape();
    require(s.rank() >= 2, ErrorKind::shape, dims_msg("slice_channels", "input must have a channel axis"));
    require(offset >= 0 && count >= 1 && offset + count <= s[1], ErrorKind::shape,
            dims_msg("slice_channels", "channel range outside extent " + std::to_string(s[1])));
    const Index n = s[0], c = s[1], l = trailing(s);
    Tensor<S> out(s.with(1, count));
    for (Index b = 0; b < n; ++b)
        std::copy_n(x.value().data() + (b * c + offset) * l, count * l, out.data() + b * count * l);
    return x.tape->record(std::move(out), {x}, [=](Tape<S>& t, const Tensor<S>& gy) {
        auto& g = t.grad_acc(x);
        for (Index b = 0; b < n; ++b) {
            S* dst = g.data() + (b * c + offset) * l;
            const S* src = gy.data() + b * count * l;
            for (Index q = 0; q < count * l; ++q) dst[q] += src[q];
        }
    });
}

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& xs) {
    require(!xs.empty(), ErrorKind::shape, dims_msg("concat_channels", "no inputs"));
    const Shape& s0 = xs[0].shape();
    require(s0.rank() >= 2, ErrorKind::shape, dims_msg("concat_channels", "inputs must have a channel axis"));
    const Index n = s0[0], l = trailing(s0);
    Index c_total = 0;
    std::vector<Index> offsets;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        require(s.rank() == s0.rank() && s[0] == n && trailing(s) == l, ErrorKind::shape,
                dims_msg("concat_channels", "shape " + s.str() + " incompatible with " + s0.str()));
        offsets.push_back(c_total);
        c_total += s[1];
    }
    auto out = Tensor<S>::uninitialized(s0.with(1, c_total));
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Index c = xs[i].dim(1);
        for (Index b = 0; b < n; ++b)
            std::copy_n(xs[i].value().data() + b * c * l, c * l, out.data() + (b * c_total + offsets[i]) * l);
    }
    return xs[0].tape->record(std::move(out), xs, [=](Tape<S>& t, const Tensor<S>& gy) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (!t.needs_grad(xs[i])) continue;
            auto& g = t.grad_acc(xs[i]);
            const Index c = g.dim(1);
            for (Index b = 0; b < n; ++b) {
                S* dst = g.data() + b * c * l;
                const S* src = gy.data() + (b * c_total + offsets[i]) * l;
                for (Index q = 0; q < c * l; ++q) dst[q] += src[q];
            }
        }
    });
}

template <typename S>
Var<S> channel_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps) {
    const Shape& s = x.shape();
    require(s.rank() >= 3, ErrorKind::shape, dims_msg("channel_norm", "input needs positions after the channel axis"));
    require(gamma.shape() == Shape{s[1]} && beta.shape() == Shape{s[1]}, ErrorKind::shape,
            dims_msg("channel_norm", "gamma/beta must have shape [" + std::to_string(s[1]) + "]"));
    const Index n = s[0], c = s[1], l = trailing(s);
    Tensor<S> out(s);
    Tensor<S> xhat(s);
    Tensor<S> inv_std(Shape{n, c});
    const S* xv = x.value().data();
    for (Index b = 0; b < n; ++b) {
        for (Index ch = 0; ch < c; ++ch) {
            const Index base = (b * c + ch) * l;
            S mean = 0;
            for (Index q = 0; q < l; ++q) mean += xv[base + q];
            mean /= S(l);
            S var = 0;
            for (Index q = 0; q < l; ++q) {
                const S d = xv[base + q] - mean;
                var += d * d;
            }
            var /= S(l);
            const S is = S(1) / std::sqrt(var + eps);
            inv_std(b, ch) = is;
            const S gm = gamma.value()[ch], bt = beta.value()[ch];
            for (Index q = 0; q < l; ++q) {
                const S xh = (xv[base + q] - mean) * is;
                xhat[base + q] = xh;
                out[base + q] = gm * xh + bt;
            }
        }
    }
    return x.tape->record(std::move(out), {x, gamma, beta}, [=](Tape<S>& t, const Tensor<S>& gy) {
        const bool need_x = t.needs_grad(x);
        const bool need_g = t.needs_grad(gamma);
        const bool need_b = t.needs_grad(beta);
        for (Index b = 0; b < n; ++b) {
            for (Index ch = 0; ch < c; ++ch) {
                const Index base = (b * c + ch) * l;
                S sum_dy = 0, sum_dy_xh = 0;
                for (Index q = 0; q < l; ++q) {
                    sum_dy += gy[base + q];
                    sum_dy_xh += gy[base + q] * xhat[base + q];
                }
                if (need_g) t.grad_acc(gamma)[ch] += sum_dy_xh;
                if (need_b) t.grad_acc(beta)[ch] += sum_dy;
                if (need_x) {
                    const S gm = t.value(gamma)[ch];
                    const S k = gm * inv_std(b, ch) / S(l);
                    S* gx = t.grad_acc(x).data() + base;
                    for (Index q = 0; q < l; ++q)
                        gx[q] += k * (S(l) * gy[base + q] - sum_dy - xhat[base + q] * sum_dy_xh);
                }
            }
        }
    });
}

template <typename S>
Var<S> channel_affine(Var<S> x, Var<S> gamma, Var<S> beta) {
    const Shape& s = x.shape();
    require(s.rank() >= 2, ErrorKind::shape, dims_msg("channel_affine", "input must have a channel axis"));
    require(gamma.shape() == Shape{s[1]} && beta.shape() == Shape{s[1]}, ErrorKind::shape,
            dims_msg("channel_affine", "gamma/beta must have shape [" + std::to_string(s[1]) + "]"));
    const Index n = s[0], c = s[1], l = trailing(s);
    Tensor<S> out(s);
    for (Index b = 0; b < n; ++b)
        for (Index ch = 0; ch < c; ++ch) {
            const Index base = (b * c + ch) * l;
            const S gm = gamma.value()[ch], bt = beta.value()[ch];
            for (Index q = 0; q < l; ++q) out[base + q] = gm * x.value()[base + q] + bt;
        }
    return x.tape->record(std::move(out), {x, gamma, beta}, [=](Tape<S>& t, const Tensor<S>& gy) {
        for (Index b = 0; b < n; ++b)
            for (Index ch = 0; ch < c; ++ch) {
                const Index base = (b * c + ch) * l;
                if (t.needs_grad(x)) {
                    const S gm = t.value(gamma)[ch];
                    S* gx = t.grad_acc(x).data() + base;
                    for (Index q = 0; q < l; ++q) gx[q] += gm * gy[base + q];
                }
                if (t.needs_grad(gamma)) {
                    S acc = 0;
                    for (Index q = 0; q < l; ++q) acc += gy[base + q] * t.value(x)[base + q];
                    t.grad_acc(gamma)[ch] += acc;
                }
                if (t.needs_grad(beta)) {
                    S acc = 0;
                    for (Index q = 0; q < l; ++q) acc += gy[base + q];
                    t.grad_acc(beta)[ch] += acc;
                }
            }
    });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    check_same_shape("add", a, b);
    Tensor<S> out(a.shape());
    out.vec() = a.value().vec() + b.value().vec();
    return a.tape->record(std::move(out), {a, b}, [=](Tape<S>& t, const Tensor<S>& gy) {
        if (t.needs_grad(a)) t.grad_acc(a).vec() += gy.vec();
        if (t.needs_grad(b)) t.grad_acc(b).vec() += gy.vec();
    });
}

template <typename S>
Var<S> add_n(const std::vector<Var<S>>& xs) {
    require(!xs.empty(), ErrorKind::shape, dims_msg("add_n", "no inputs"));
    Tensor<S> out = xs[0].value();
    for (std::size_t i = 1; i < xs.size(); ++i) {
        check_same_shape("add_n", xs[0], xs[i]);
        out.vec() += xs[i].value().vec();
    }
    return xs[0].tape->record(std::move(out), xs, [=](Tape<S>& t, const Tensor<S>& gy) {
        for (const auto& x : xs)
            if (t.needs_grad(x)) t.grad_acc(x).vec() += gy.vec();
    });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
    check_same_shape("mul", a, b);
    Tensor<S> out(a.shape());
    out.vec() = a.value().vec().cwiseProduct(b.value().vec());
    return a.tape->record(std::move(out), {a, b}, [=](Tape<S>& t, const Tensor<S>& gy) {
        if (t.needs_grad(a)) t.grad_acc(a).vec() += gy.vec().cwiseProduct(t.value(b).vec());
        if (t.needs_grad(b)) t.grad_acc(b).vec() += gy.vec().cwiseProduct(t.value(a).vec());
    });
}

template <typename S>
Var<S> coordinate_fuse(Var<S> x, const std::vector<Var<S>>& gh, const std::vector<Var<S>>& gw) {
    const Shape& s = x.shape();
    require(s.rank() == 4, ErrorKind::shape, dims_msg("coordinate_fuse", "input must be rank 4"));
    require(!gh.empty() && gh.size() == gw.size(), ErrorKind::shape,
            dims_msg("coordinate_fuse", "need the same positive number of height and width gates"));
    const Index n = s[0], c = s[1], h = s[2], w = s[3];
    for (std::size_t i = 0; i < gh.size(); ++i) {
        require(gh[i].shape() == Shape{n, c, h}, ErrorKind::shape,
                dims_msg("coordinate_fuse", "height gate shape " + gh[i].shape().str()));
        require(gw[i].shape() == Shape{n, c, w}, ErrorKind::shape,
                dims_msg("coordinate_fuse", "width gate shape " + gw[i].shape().str()));
    }
    const std::size_t splits = gh.size();
    // Gate mass per position, summed over splits in ascending order.
    Tensor<S> mass(s);
    for (Index nc = 0; nc < n * c; ++nc)
        for (Index i = 0; i < h; ++i)
            for (Index j = 0; j < w; ++j) {
                S m = 0;
                for (std::size_t r = 0; r < splits; ++r)
                    m += gh[r].value()[nc * h + i] * gw[r].value()[nc * w + j];
                mass[(nc * h + i) * w + j] = m;
            }
    Tensor<S> out(s);
    out.vec() = x.value().vec().cwiseProduct(mass.vec());
    std::vector<Var<S>> inputs{x};
    inputs.insert(inputs.end(), gh.begin(), gh.end());
    inputs.insert(inputs.end(), gw.begin(), gw.end());
    return x.tape->record(std::move(out), inputs, [=](Tape<S>& t, const Tensor<S>& gy) {
        if (t.needs_grad(x)) t.grad_acc(x).vec() += gy.vec().cwiseProduct(mass.vec());
        const S* xv = t.value(x).data();
        for (std::size_t r = 0; r < splits; ++r) {
            const bool need_h = t.needs_grad(gh[r]);
            const bool need_w = t.needs_grad(gw[r]);
            if (!need_h && !need_w) continue;
            const S* hv = t.value(gh[r]).data();
            const S* wv = t.value(gw[r]).data();
            S* ghg = need_h ? t.grad_acc(gh[r]).data() : nullptr;
            S* gwg = need_w ? t.grad_acc(gw[r]).data() : nullptr;
            for (Index nc = 0; nc < n * c; ++nc)
                for (Index i = 0; i < h; ++i) {
                    S acc_h = 0;
                    for (Index j = 0; j < w; ++j) {
                        const Index q = (nc * h + i) * w + j;
                        const S gx = gy[q] * xv[q];
                        acc_h += gx * wv[nc * w + j];
                        if (need_w) gwg[nc * w + j] += gx * hv[nc * h + i];
                    }
                    if (need_h) ghg[nc * h + i] += acc_h;
                }
        }
    });
}

template <typename S>
Var<S> channel_fuse(Var<S> x, const std::vector<Var<S>>& g) {
    const Shape& s = x.shape();
    require(s.rank() >= 2, ErrorKind::shape, dims_msg("channel_fuse", "input must have a channel axis"));
    require(!g.empty(), ErrorKind::shape, dims_msg("channel_fuse", "no gates"));
    const Index n = s[0], c = s[1], l = trailing(s);
    for (const auto& gi : g)
        require(gi.shape() == Shape{n, c}, ErrorKind::shape, dims_msg("channel_fuse", "gate shape " + gi.shape().str()));
    Tensor<S> mass(Shape{n, c});
    for (Index nc = 0; nc < n * c; ++nc) {
        S m = 0;
        for (const auto& gi : g) m += gi.value()[nc];
        mass[nc] = m;
    }
    Tensor<S> out(s);
    for (Index nc = 0; nc < n * c; ++nc)
        for (Index q = 0; q < l; ++q) out[nc * l + q] = x.value()[nc * l + q] * mass[nc];
    std::vector<Var<S>> inputs{x};
    inputs.insert(inputs.end(), g.begin(), g.end());
    return x.tape->record(std::move(out), inputs, [=](Tape<S>& t, const Tensor<S>& gy) {
        const S* xv = t.value(x).data();
        if (t.needs_grad(x)) {
            S* gx = t.grad_acc(x).data();
            for (Index nc = 0; nc < n * c; ++nc)
                for (Index q = 0; q < l; ++q) gx[nc * l + q] += gy[nc * l + q] * mass[nc];
        }
        Tensor<S> dmass(Shape{n, c});
        for (Index nc = 0; nc < n * c; ++nc) {
            S acc = 0;
            for (Index q = 0; q < l; ++q) acc += gy[nc * l + q] * xv[nc * l + q];
            dmass[nc] = acc;
        }
        for (const auto& gi : g)
            if (t.needs_grad(gi)) t.grad_acc(gi).vec() += dmass.vec();
    });
}

template <typename S>
Var<S> upsample2x(Var<S> x) {
    const Shape& s = x.shape();
    require(s.rank() == 4, ErrorKind::shape, dims_msg("upsample2x", "input must be rank 4"));
    const Index nc = s[0] * s[1], h = s[2], w = s[3];
    auto out = Tensor<S>::uninitialized(Shape{s[0], s[1], 2 * h, 2 * w});
    const S* xv = x.value().data();
    for (Index i = 0; i < nc; ++i)
        for (Index r = 0; r < 2 * h; ++r)
            for (Index q = 0; q < 2 * w; ++q) out[(i * 2 * h + r) * 2 * w + q] = xv[(i * h + r / 2) * w + q / 2];
    return x.tape->record(std::move(out), {x}, [=](Tape<S>& t, const Tensor<S>& gy) {
        S* gx = t.grad_acc(x).data();
        for (Index i = 0; i < nc; ++i)
            for (Index r = 0; r < 2 * h; ++r)
                for (Index q = 0; q < 2 * w; ++q) gx[(i * h + r / 2) * w + q / 2] += gy[(i * 2 * h + r) * 2 * w + q];
    });
}

template <typename S>
Var<S> sum(Var<S> x) {
    S acc = 0;
    for (Index i = 0; i < x.value().size(); ++i) acc += x.value()[i];
    return x.tape->record(Tensor<S>::scalar(acc), {x}, [=](Tape<S>& t, const Tensor<S>& gy) {
        t.grad_acc(x).vec().array() += gy[0];
    });
}

template <typename S>
Var<S> weighted_sum(Var<S> x, const Tensor<S>& weights) {
    require(weights.shape() == x.shape(), ErrorKind::shape,
            dims_msg("weighted_sum", "weights " + weights.shape().str() + " vs input " + x.shape().str()));
    S acc = 0;
    for (Index i = 0; i < x.value().size(); ++i) acc += x.value()[i] * weights[i];
    return x.tape->record(Tensor<S>::scalar(acc), {x}, [=](Tape<S>& t, const Tensor<S>& gy) {
        t.grad_acc(x).vec() += gy[0] * weights.vec();
    });
}

#define SCANET_INSTANTIATE_OPS(S)                                                                          \
    template Var<S> conv2d(Var<S>, Var<S>, NoDeduce<std::optional<Var<S>>>, const Conv2dOptions&);                  \
    template Var<S> dense(Var<S>, Var<S>, Var<S>);                                                        \
    template Var<S> pointwise(Var<S>, Var<S>, NoDeduce<std::optional<Var<S>>>);                                     \
    template Var<S> relu(Var<S>);                                                                         \
    template Var<S> sigmoid(Var<S>);                                                                      \
    template Var<S> activation(Var<S>, Activation);                                                       \
    template Var<S> global_avg_pool(Var<S>);                                                              \
    template Var<S> row_mean(Var<S>);                                                                     \
    template Var<S> col_mean(Var<S>);                                                                     \
    template std::pair<Var<S>, Var<S>> directional_avg_pool(Var<S>);                                      \
    template Var<S> concat_strip(Var<S>, Var<S>);                                                         \
    template std::pair<Var<S>, Var<S>> split_strip(Var<S>, Index);                                        \
    template Var<S> slice_last(Var<S>, Index, Index);                                                     \
    template Var<S> slice_channels(Var<S>, Index, Index);                                                 \
    template Var<S> concat_channels(const std::vector<Var<S>>&);                                          \
    template Var<S> channel_norm(Var<S>, Var<S>, Var<S>, S);                                              \
    template Var<S> channel_affine(Var<S>, Var<S>, Var<S>);                                               \
    template Var<S> add(Var<S>, Var<S>);                                                                  \
    template Var<S> add_n(const std::vector<Var<S>>&);                                                    \
    template Var<S> mul(Var<S>, Var<S>);                                                                  \
    template Var<S> coordinate_fuse(Var<S>, const std::vector<Var<S>>&, const std::vector<Var<S>>&);      \
    template Var<S> channel_fuse(Var<S>, const std::vector<Var<S>>&);                                     \
    template Var<S> upsample2x(Var<S>);                                                                   \
    template Var<S> sum(Var<S>);                                                                          \
    template Var<S> weighted_sum(Var<S>, const Tensor<S>&);

SCANET_INSTANTIATE_OPS(float)
SCANET_INSTANTIATE_OPS(double)

} // namespace scanet
