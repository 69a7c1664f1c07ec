#pragma once

#include <optional>
#include <type_traits>
#include <utility>
#include <vector>

#include "scanet/tape.hpp"

namespace scanet {

// Differentiable primitives. Every function records one node on the tape of
// its first argument. Reductions sum in ascending index order, sequentially.

template <typename T>
using NoDeduce = std::type_identity_t<T>;

enum class PadMode { zeros, replicate };
enum class Activation { relu, sigmoid, identity };

struct Conv2dOptions {
    int stride = 1;
    int pad = 0;
    int groups = 1;
    PadMode pad_mode = PadMode::zeros;
};

/// Grouped 2-D cross-correlation. input [N,Cin,H,W], weight
/// [Cout,Cin/groups,kh,kw], optional bias [Cout].
template <typename S>
Var<S> conv2d(Var<S> input, Var<S> weight, NoDeduce<std::optional<Var<S>>> bias, const Conv2dOptions& opt);

/// Affine map over the last axis: [..., Cin] x [Cout,Cin] -> [..., Cout].
template <typename S>
Var<S> dense(Var<S> input, Var<S> weight, Var<S> bias);

/// Affine map over axis 1 at every trailing position (a 1x1 convolution):
/// [N,Cin,...] x [Cout,Cin] -> [N,Cout,...].
template <typename S>
Var<S> pointwise(Var<S> input, Var<S> weight, NoDeduce<std::optional<Var<S>>> bias);

template <typename S>
Var<S> relu(Var<S> x);

/// Branch-stable logistic function, clamped to the open interval (0,1).
template <typename S>
Var<S> sigmoid(Var<S> x);

template <typename S>
Var<S> activation(Var<S> x, Activation kind);

/// [N,C,H,W] -> [N,C], mean over all H*W positions.
template <typename S>
Var<S> global_avg_pool(Var<S> x);

/// [N,C,H,W] -> [N,C,H]: mean over W for each row (pooling kernel (1,W)).
template <typename S>
Var<S> row_mean(Var<S> x);

/// [N,C,H,W] -> [N,C,W]: mean over H for each column (pooling kernel (H,1)).
template <typename S>
Var<S> col_mean(Var<S> x);

/// (row_mean, col_mean).
template <typename S>
std::pair<Var<S>, Var<S>> directional_avg_pool(Var<S> x);

/// [N,C,H] ++ [N,C,W] -> [N,C,H+W]; the h segment comes first.
template <typename S>
Var<S> concat_strip(Var<S> sh, Var<S> sw);

/// Inverse of concat_strip: first `h` positions, then the rest.
template <typename S>
std::pair<Var<S>, Var<S>> split_strip(Var<S> strip, Index h);

/// Contiguous range [offset, offset+count) of the last axis.
template <typename S>
Var<S> slice_last(Var<S> x, Index offset, Index count);

/// Channel range [offset, offset+count) of axis 1.
template <typename S>
Var<S> slice_channels(Var<S> x, Index offset, Index count);

/// Concatenation along axis 1, in argument order.
template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& xs);

/// Per (n,c) standardisation over all trailing positions followed by a
/// per-channel affine map: gamma[c] * (x - mean) / sqrt(var + eps) + beta[c].
template <typename S>
Var<S> channel_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5));

/// gamma[c] * x + beta[c] over axis 1.
template <typename S>
Var<S> channel_affine(Var<S> x, Var<S> gamma, Var<S> beta);

template <typename S>
Var<S> add(Var<S> a, Var<S> b);

/// Elementwise sum of equally shaped tensors, accumulated left to right.
template <typename S>
Var<S> add_n(const std::vector<Var<S>>& xs);

template <typename S>
Var<S> mul(Var<S> a, Var<S> b);

/// x[n,c,h,w] * sum_i gh[i][n,c,h] * gw[i][n,c,w].
template <typename S>
Var<S> coordinate_fuse(Var<S> x, const std::vector<Var<S>>& gh, const std::vector<Var<S>>& gw);

/// x[n,c,...] * sum_i g[i][n,c].
template <typename S>
Var<S> channel_fuse(Var<S> x, const std::vector<Var<S>>& g);

/// Nearest-neighbour 2x upsampling of [N,C,H,W].
template <typename S>
Var<S> upsample2x(Var<S> x);

/// Scalar sum of all elements.
template <typename S>
Var<S> sum(Var<S> x);

/// Scalar sum of x * weights, with `weights` treated as a constant.
template <typename S>
Var<S> weighted_sum(Var<S> x, const Tensor<S>& weights);

} // namespace scanet
