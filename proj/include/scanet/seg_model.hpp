#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "scanet/attention.hpp"

namespace scanet {

struct EncoderConfig {
    Index stem_width = 16;
    std::array<Index, 5> widths{16, 32, 64, 128, 256};
    int blocks_per_stage = 1;
    Variant variant = Variant::sca;
    SCAConfig sca{};

    bool operator==(const EncoderConfig&) const = default;
};

/// Nested-skip decoder. depth 1 is a plain U-Net; depth L >= 2 adds nested
/// nodes X(i,j) for 1 <= j <= L-1 at every level i with i + j <= 4.
struct DecoderConfig {
    int depth = 3;
    std::array<Index, 4> widths{8, 8, 16, 16};  // levels 0..3 (extents H/2..H/16)
    Index head_width = 8;
    int nested_kernel = 1;  // kernel size of the X(i,j) nodes; path nodes are 3x3

    bool operator==(const DecoderConfig&) const = default;
};

struct ModelConfig {
    EncoderConfig encoder{};
    DecoderConfig decoder{};

    /// Throws Error(config) naming the first violated constraint.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// Stem convolution followed by five stride-2 stages of attention blocks.
template <typename S>
class Encoder {
public:
    Encoder(const EncoderConfig& config, ParameterSet<S>& params, SplitMix64& rng);

    /// Five feature maps at H/2, H/4, H/8, H/16, H/32.
    std::vector<Var<S>> forward(Tape<S>& tape, Var<S> image) const;

    const EncoderConfig& config() const { return config_; }
    const std::vector<std::vector<AttentionBlock<S>>>& stages() const { return stages_; }

private:
    EncoderConfig config_;
    Parameter<S>* stem_weight_ = nullptr;
    Parameter<S>* stem_bias_ = nullptr;
    std::vector<std::vector<AttentionBlock<S>>> stages_;
};

template <typename S>
class Decoder {
public:
    Decoder(const DecoderConfig& config, const std::array<Index, 5>& encoder_widths, ParameterSet<S>& params,
            SplitMix64& rng);

    /// Logits [N,1,2h0,2w0] from the five-level pyramid.
    Var<S> forward(Tape<S>& tape, const std::vector<Var<S>>& pyramid) const;

    const DecoderConfig& config() const { return config_; }

private:
    struct ConvUnit {
        Parameter<S>* weight = nullptr;
        Parameter<S>* bias = nullptr;
    };
    ConvUnit make_unit(const std::string& name, Index in, Index out, Index k, ParameterSet<S>& params,
                       SplitMix64& rng);
    Var<S> apply(Tape<S>& tape, const ConvUnit& unit, Var<S> x, bool rectify) const;

    DecoderConfig config_;
    std::array<Index, 5> encoder_widths_;
    // nested_[i][j-1] is X(i,j); path_[i] is the decoder-path node at level i.
    std::array<std::vector<ConvUnit>, 4> nested_;
    std::array<ConvUnit, 4> path_;
    ConvUnit head_, logit_;
};

/// Encoder + decoder with its own parameter set. Not copyable: blocks point
/// into `params`.
template <typename S>
class SegModel {
public:
    SegModel(const ModelConfig& config, std::uint64_t seed);
    SegModel(const SegModel&) = delete;
    SegModel& operator=(const SegModel&) = delete;

    Var<S> forward(Tape<S>& tape, Var<S> image) const;
    std::vector<Var<S>> features(Tape<S>& tape, Var<S> image) const { return encoder_.forward(tape, image); }

    const ModelConfig& config() const { return config_; }
    ParameterSet<S> params;

private:
    ModelConfig config_;
    SplitMix64 init_rng_;
    Encoder<S> encoder_;
    Decoder<S> decoder_;
};

/// Per-stage parameter counts of a model (stem folded into "stem", decoder
/// into "decoder"), in registration order.
struct ParamBreakdown {
    std::vector<std::pair<std::string, Index>> groups;
    Index total = 0;
};
template <typename S>
ParamBreakdown param_breakdown(const ParameterSet<S>& params);

// Loss ------------------------------------------------------------------------

inline constexpr double kDiceSmooth = 1.0;
inline constexpr double kBceEps = 1e-7;

struct LossParts {
    double bce = 0;
    double dice = 0;
    double total() const { return bce + dice; }
};

/// Mean binary cross entropy of sigmoid(logits) plus soft Dice loss with
/// batch-global sums and smoothing kDiceSmooth. BCE is evaluated in logit
/// form; each pixel term is capped at -ln(kBceEps).
template <typename S>
LossParts bce_dice_parts(const Tensor<S>& logits, const Tensor<S>& target);

/// Differentiable scalar version of bce_dice_parts.
template <typename S>
Var<S> bce_dice_loss(Var<S> logits, const Tensor<S>& target);

// Metrics ---------------------------------------------------------------------

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

struct MetricsRecord {
    double iou = 0, precision = 0, recall = 0, f1 = 0;
    double loss = 0;
    int epoch = 0;
};

/// Harmonic mean of precision and recall, 0 when both are 0.
double f1_score(double precision, double recall);

/// Pixel counts with prediction = prob > threshold and foreground = target > 0.5.
template <typename S>
ConfusionCounts confusion_counts(const Tensor<S>& prob, const Tensor<S>& target, double threshold = 0.5);

/// Ratios from accumulated counts; empty denominators give 0.
MetricsRecord metrics_from_counts(const ConfusionCounts& counts);

template <typename S>
MetricsRecord segmentation_metrics(const Tensor<S>& prob, const Tensor<S>& target, double threshold = 0.5) {
    return metrics_from_counts(confusion_counts(prob, target, threshold));
}

// Analysis --------------------------------------------------------------------

/// D x D cosine similarities between feature vectors at diagonal pixels
/// (a,a) and (b,b) of a [1,C,H,W] map, D = min(H,W). Zero vectors give 0.
template <typename S>
Eigen::MatrixXd diagonal_similarity(const Tensor<S>& features);

// Learning-rate schedule --------------------------------------------------------

/// Halves the learning rate once the best validation IoU has not strictly
/// improved for `patience` consecutive epochs, then restarts the count.
class PlateauSchedule {
public:
    PlateauSchedule(double lr, int patience);

    /// Feeds one epoch's IoU; returns true if the rate was halved.
    bool observe(double iou);

    double learning_rate() const { return lr_; }
    double best() const { return best_; }
    int stalled_epochs() const { return stall_; }

private:
    double lr_;
    int patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    int stall_ = 0;
};

/// Learning rate in effect after replaying `history` from `initial_lr`.
double lr_schedule_step(const std::vector<double>& history, double initial_lr, int patience = 10);

} // namespace scanet
