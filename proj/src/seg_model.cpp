#include "scanet/seg_model.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "scanet/init.hpp"

namespace scanet {

void ModelConfig::validate() const {
    const auto& e = encoder;
    require(e.stem_width >= 1, ErrorKind::config, "stem width must be >= 1");
    require(e.blocks_per_stage >= 1, ErrorKind::config, "blocks per stage must be >= 1");
    BlockSpec probe;
    probe.variant = e.variant;
    probe.sca = e.sca;
    const SCAConfig eff = probe.effective();
    Index in = e.stem_width;
    for (int s = 0; s < 5; ++s) {
        const Index w = e.widths[s];
        const std::string where = "stage " + std::to_string(s) + " width " + std::to_string(w);
        require(w >= 1, ErrorKind::config, where + " must be >= 1");
        require(w % eff.cardinality == 0 && (w / eff.cardinality) % eff.reduction == 0, ErrorKind::config,
                where + " must be divisible by K and K*r");
        require(in % eff.groups() == 0 && w % eff.groups() == 0, ErrorKind::config,
                where + ": block input widths must be divisible by K*R = " + std::to_string(eff.groups()));
        in = w;
    }
    require(decoder.depth >= 1 && decoder.depth <= 5, ErrorKind::config, "decoder depth must be in [1,5]");
    for (Index w : decoder.widths) require(w >= 1, ErrorKind::config, "decoder widths must be >= 1");
    require(decoder.head_width >= 1, ErrorKind::config, "head width must be >= 1");
    require(decoder.nested_kernel == 1 || decoder.nested_kernel == 3, ErrorKind::config,
            "nested kernel must be 1 or 3");
}

// Encoder ------------------------------------------------------------------

template <typename S>
Encoder<S>::Encoder(const EncoderConfig& config, ParameterSet<S>& params, SplitMix64& rng) : config_(config) {
    stem_weight_ = &params.add("stem.weight", fan_in_uniform<S>(Shape{config.stem_width, 3, 3, 3}, 27, kReluGain, rng));
    stem_bias_ = &params.add("stem.bias", Tensor<S>(Shape{config.stem_width}));
    Index in = config.stem_width;
    for (int s = 0; s < 5; ++s) {
        std::vector<AttentionBlock<S>> blocks;
        for (int b = 0; b < config.blocks_per_stage; ++b) {
            BlockSpec spec;
            spec.variant = config.variant;
            spec.in_channels = in;
            spec.channels = config.widths[s];
            spec.stride = b == 0 ? 2 : 1;
            spec.sca = config.sca;
            blocks.emplace_back("stage" + std::to_string(s) + ".block" + std::to_string(b), spec, params, rng);
            in = spec.channels;
        }
        stages_.push_back(std::move(blocks));
    }
}

template <typename S>
std::vector<Var<S>> Encoder<S>::forward(Tape<S>& tape, Var<S> image) const {
    const Shape& s = image.shape();
    require(s.rank() == 4 && s[1] == 3, ErrorKind::shape, "encoder: expected an [N,3,H,W] image, got " + s.str());
    require(s[2] % 32 == 0 && s[3] % 32 == 0, ErrorKind::shape,
            "encoder: H and W must be divisible by 32, got " + s.str());
    auto x = relu(conv2d(image, tape.param(*stem_weight_), tape.param(*stem_bias_), {1, 1, 1, PadMode::replicate}));
    std::vector<Var<S>> pyramid;
    for (const auto& stage : stages_) {
        for (const auto& block : stage) x = block.forward(tape, x);
        pyramid.push_back(x);
    }
    return pyramid;
}

// Decoder ------------------------------------------------------------------

template <typename S>
typename Decoder<S>::ConvUnit Decoder<S>::make_unit(const std::string& name, Index in, Index out, Index k,
                                                    ParameterSet<S>& params, SplitMix64& rng) {
    const double gain = name == "decoder.logit" ? 1.0 : kReluGain;
    ConvUnit u;
    u.weight = &params.add(name + ".weight", fan_in_uniform<S>(Shape{out, in, k, k}, in * k * k, gain, rng));
    u.bias = &params.add(name + ".bias", Tensor<S>(Shape{out}));
    return u;
}

template <typename S>
Var<S> Decoder<S>::apply(Tape<S>& tape, const ConvUnit& unit, Var<S> x, bool rectify) const {
    const int pad = int(unit.weight->value.dim(2) / 2);
    auto y = conv2d(x, tape.param(*unit.weight), tape.param(*unit.bias), {1, pad, 1, PadMode::replicate});
    return rectify ? relu(y) : y;
}

template <typename S>
Decoder<S>::Decoder(const DecoderConfig& config, const std::array<Index, 5>& encoder_widths,
                    ParameterSet<S>& params, SplitMix64& rng)
    : config_(config), encoder_widths_(encoder_widths) {
    const auto& dw = config.widths;
    // Width of X(i,j): encoder width for j = 0, decoder width otherwise.
    auto width = [&](int i, int j) { return j == 0 ? encoder_widths[i] : dw[i]; };
    for (int j = 1; j < config.depth; ++j)
        for (int i = 0; i + j <= 4 && i < 4; ++i) {
            Index in = width(i + 1, j - 1);
            for (int m = 0; m < j; ++m) in += width(i, m);
            nested_[i].push_back(make_unit("decoder.x" + std::to_string(i) + std::to_string(j), in, dw[i],
                                           config.nested_kernel, params, rng));
        }
    for (int i = 3; i >= 0; --i) {
        Index in = encoder_widths[i] + Index(nested_[i].size()) * dw[i] + (i == 3 ? encoder_widths[4] : dw[i + 1]);
        path_[i] = make_unit("decoder.d" + std::to_string(i), in, dw[i], 3, params, rng);
    }
    head_ = make_unit("decoder.head", dw[0], config.head_width, 3, params, rng);
    logit_ = make_unit("decoder.logit", config.head_width, 1, 1, params, rng);
}

template <typename S>
Var<S> Decoder<S>::forward(Tape<S>& tape, const std::vector<Var<S>>& pyramid) const {
    require(pyramid.size() == 5, ErrorKind::shape, "decoder: expected 5 pyramid levels");
    for (int i = 0; i < 5; ++i) {
        require(pyramid[i].dim(1) == encoder_widths_[i], ErrorKind::shape,
                "decoder: level " + std::to_string(i) + " has " + std::to_string(pyramid[i].dim(1)) +
                    " channels, expected " + std::to_string(encoder_widths_[i]));
        if (i > 0)
            require(pyramid[i].dim(2) * 2 == pyramid[i - 1].dim(2) && pyramid[i].dim(3) * 2 == pyramid[i - 1].dim(3),
                    ErrorKind::shape, "decoder: level " + std::to_string(i) + " extent is not half of the level above");
    }
    std::array<std::vector<Var<S>>, 5> x;
    for (int i = 0; i < 5; ++i) x[i].push_back(pyramid[i]);
    for (int j = 1; j < config_.depth; ++j)
        for (int i = 0; i + j <= 4 && i < 4; ++i) {
            std::vector<Var<S>> parts(x[i].begin(), x[i].begin() + j);
            parts.push_back(upsample2x(x[i + 1][j - 1]));
            x[i].push_back(apply(tape, nested_[i][j - 1], concat_channels(parts), true));
        }
    Var<S> d = pyramid[4];
    for (int i = 3; i >= 0; --i) {
        std::vector<Var<S>> parts = x[i];
        parts.push_back(upsample2x(d));
        d = apply(tape, path_[i], concat_channels(parts), true);
    }
    auto head = apply(tape, head_, upsample2x(d), true);
    return apply(tape, logit_, head, false);
}

// Model --------------------------------------------------------------------

template <typename S>
SegModel<S>::SegModel(const ModelConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)),
      init_rng_(seed),
      encoder_(config.encoder, params, init_rng_),
      decoder_(config.decoder, config.encoder.widths, params, init_rng_) {}

template <typename S>
Var<S> SegModel<S>::forward(Tape<S>& tape, Var<S> image) const {
    return decoder_.forward(tape, encoder_.forward(tape, image));
}

template <typename S>
ParamBreakdown param_breakdown(const ParameterSet<S>& params) {
    ParamBreakdown out;
    for (const auto& p : params) {
        const std::string group = p.name.substr(0, p.name.find('.'));
        if (out.groups.empty() || out.groups.back().first != group) out.groups.emplace_back(group, 0);
        out.groups.back().second += p.value.size();
        out.total += p.value.size();
    }
    return out;
}

// Loss ---------------------------------------------------------------------

namespace {

template <typename S>
void check_loss_inputs(const Tensor<S>& logits, const Tensor<S>& target) {
    require(logits.shape() == target.shape(), ErrorKind::shape,
            "bce_dice_loss: logits " + logits.shape().str() + " vs target " + target.shape().str());
    require(logits.vec().allFinite(), ErrorKind::numeric, "bce_dice_loss: non-finite logits");
    for (Index i = 0; i < target.size(); ++i)
        require(target[i] == S(0) || target[i] == S(1), ErrorKind::data, "bce_dice_loss: target values must be 0 or 1");
}

struct LossState {
    LossParts parts;
    double inter = 0, denom = 0;  // sum p*t, sum p + sum t + s
    Eigen::ArrayXd p;             // sigmoid of the logits
    Eigen::ArrayXd t;
    Eigen::Array<bool, Eigen::Dynamic, 1> live;  // pixels whose BCE term is below the cap
};

// Array expressions keep exp/log1p vectorised; scalar libm calls in this loop
// were an order of magnitude slower.
template <typename S>
LossState loss_state(const Tensor<S>& logits, const Tensor<S>& target) {
    check_loss_inputs(logits, target);
    const double cap = -std::log(kBceEps);
    LossState s;
    const Eigen::ArrayXd z = logits.vec().template cast<double>().array();
    s.t = target.vec().template cast<double>().array();
    const Eigen::ArrayXd e = (-z.abs()).exp();
    s.p = (z >= 0).select(1.0 / (1.0 + e), e / (1.0 + e));
    // softplus(-z) for foreground, softplus(z) for background
    const Eigen::ArrayXd signed_z = (s.t > 0).select(-z, z);
    const Eigen::ArrayXd bce = signed_z.max(0.0) + e.log1p();
    s.live = bce < cap;
    s.parts.bce = bce.min(cap).sum() / double(z.size());
    s.inter = (s.p * s.t).sum();
    s.denom = s.p.sum() + s.t.sum() + kDiceSmooth;
    s.parts.dice = 1.0 - (2.0 * s.inter + kDiceSmooth) / s.denom;
    return s;
}

} // namespace

template <typename S>
LossParts bce_dice_parts(const Tensor<S>& logits, const Tensor<S>& target) {
    return loss_state(logits, target).parts;
}

template <typename S>
Var<S> bce_dice_loss(Var<S> logits, const Tensor<S>& target) {
    auto st = std::make_shared<const LossState>(loss_state(logits.value(), target));
    Tape<S>& tape = *logits.tape;
    return tape.record(Tensor<S>::scalar(S(st->parts.total())), {logits},
                       [logits, st](Tape<S>& t, const Tensor<S>& g) {
                           Tensor<S>& gz = t.grad_acc(logits);
                           const double m = double(st->p.size());
                           const double num = 2.0 * st->inter + kDiceSmooth, den2 = st->denom * st->denom;
                           const Eigen::ArrayXd dbce = st->live.select((st->p - st->t) / m, 0.0);
                           const Eigen::ArrayXd ddice = -(2.0 * st->t * st->denom - num) / den2;
                           const Eigen::ArrayXd d = dbce + ddice * st->p * (1.0 - st->p);
                           gz.vec().array() += (double(g.item()) * d).template cast<S>();
                       });
}

// Metrics ------------------------------------------------------------------

double f1_score(double precision, double recall) {
    const double s = precision + recall;
    return s > 0 ? 2.0 * precision * recall / s : 0.0;
}

template <typename S>
ConfusionCounts confusion_counts(const Tensor<S>& prob, const Tensor<S>& target, double threshold) {
    require(prob.size() == target.size(), ErrorKind::shape,
            "metrics: prediction " + prob.shape().str() + " vs target " + target.shape().str());
    ConfusionCounts c;
    for (Index i = 0; i < prob.size(); ++i) {
        const bool pred = double(prob[i]) > threshold;
        const bool fg = double(target[i]) > 0.5;
        if (pred && fg) ++c.tp;
        else if (pred) ++c.fp;
        else if (fg) ++c.fn;
        else ++c.tn;
    }
    return c;
}

MetricsRecord metrics_from_counts(const ConfusionCounts& c) {
    auto ratio = [](std::uint64_t a, std::uint64_t b) { return b == 0 ? 0.0 : double(a) / double(b); };
    MetricsRecord m;
    m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.f1 = f1_score(m.precision, m.recall);
    return m;
}

// Analysis -----------------------------------------------------------------

template <typename S>
Eigen::MatrixXd diagonal_similarity(const Tensor<S>& features) {
    const Shape& s = features.shape();
    require(s.rank() == 4 && s[0] == 1, ErrorKind::shape, "diagonal_similarity: expected [1,C,H,W], got " + s.str());
    const Index c = s[1], d = std::min(s[2], s[3]);
    Eigen::MatrixXd v(c, d);
    for (Index a = 0; a < d; ++a)
        for (Index ch = 0; ch < c; ++ch) v(ch, a) = double(features(0, ch, a, a));
    Eigen::VectorXd norm(d);
    for (Index a = 0; a < d; ++a) norm[a] = v.col(a).norm();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (Index a = 0; a < d; ++a) {
        if (norm[a] == 0) continue;
        m(a, a) = 1.0;
        for (Index b = a + 1; b < d; ++b) {
            if (norm[b] == 0) continue;
            const double cs = std::clamp(v.col(a).dot(v.col(b)) / (norm[a] * norm[b]), -1.0, 1.0);
            m(a, b) = m(b, a) = cs;
        }
    }
    return m;
}

// Schedule -----------------------------------------------------------------

PlateauSchedule::PlateauSchedule(double lr, int patience) : lr_(lr), patience_(patience) {
    require(patience >= 1, ErrorKind::config, "patience must be >= 1");
}

bool PlateauSchedule::observe(double iou) {
    if (iou > best_) {
        best_ = iou;
        stall_ = 0;
        return false;
    }
    if (++stall_ < patience_) return false;
    lr_ *= 0.5;
    stall_ = 0;
    return true;
}

double lr_schedule_step(const std::vector<double>& history, double initial_lr, int patience) {
    PlateauSchedule s(initial_lr, patience);
    for (double v : history) s.observe(v);
    return s.learning_rate();
}

#define SCANET_INSTANTIATE_SEG(S)                                                             \
    template class Encoder<S>;                                                                \
    template class Decoder<S>;                                                                \
    template class SegModel<S>;                                                               \
    template ParamBreakdown param_breakdown(const ParameterSet<S>&);                          \
    template LossParts bce_dice_parts(const Tensor<S>&, const Tensor<S>&);                    \
    template Var<S> bce_dice_loss(Var<S>, const Tensor<S>&);                                  \
    template ConfusionCounts confusion_counts(const Tensor<S>&, const Tensor<S>&, double);   \
    template Eigen::MatrixXd diagonal_similarity(const Tensor<S>&);

SCANET_INSTANTIATE_SEG(float)
SCANET_INSTANTIATE_SEG(double)

} // namespace scanet
