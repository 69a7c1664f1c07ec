#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scanet/config.hpp"
#include "scanet/synth.hpp"

namespace scanet {

struct EpochRecord {
    int epoch = 0;               // 1-based
    double learning_rate = 0;    // rate used during this epoch
    double train_loss = 0;       // mean over batches
    MetricsRecord val;           // val.loss is the mean validation loss
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    MetricsRecord best;  // validation metrics of best_epoch
    Index param_count = 0;
};

struct TrainOptions {
    std::string out_dir;  // empty: nothing is written
    bool force = false;   // replace an existing metrics.csv
    std::function<void(const EpochRecord&)> on_epoch;
};

inline constexpr const char* kMetricsHeader = "epoch,lr,train_loss,val_loss,iou,precision,recall,f1";

/// Trains config.model (its encoder variant) on `data` with seed-derived
/// initialisation and shuffling. Writes metrics.csv, best.ckpt, last.ckpt and
/// summary.txt into out_dir. Throws Error(numeric) naming the step index if a
/// loss is non-finite, and Error(io) if metrics.csv exists without `force`.
TrainResult train_model(const RunConfig& config, std::uint64_t seed, const Dataset& data, const TrainOptions& options);

/// Micro-averaged metrics and mean loss of a model over `samples`.
template <typename S>
MetricsRecord evaluate_model(const SegModel<S>& model, const std::vector<SegSample>& samples, int batch_size);

/// Loads `checkpoint` into a fresh model for config.model and evaluates it.
MetricsRecord evaluate_checkpoint(const RunConfig& config, const std::string& checkpoint,
                                  const std::vector<SegSample>& samples);

/// Samples `indices` stacked into [N,3,H,W] images and [N,1,H,W] masks.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> make_batch(const std::vector<SegSample>& samples, const std::vector<Index>& indices);

/// Seeds of the model initialiser and of the shuffling stream of a run.
std::uint64_t init_seed(std::uint64_t run_seed);
std::uint64_t shuffle_seed(std::uint64_t run_seed);

/// Raises glibc's mmap and trim thresholds so the large per-step activations
/// are recycled instead of being mapped and unmapped on every step.
void configure_allocator();

} // namespace scanet
