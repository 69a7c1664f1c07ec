#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scanet/config.hpp"
#include "scanet/gradcheck_suite.hpp"
#include "scanet/train.hpp"

namespace scanet {

// Entry points behind the `scanet` subcommands. Each writes human-readable
// progress to `log` and throws Error on failure.

/// Output directory of one training run: <output_root>/<variant>/seed<k>.
std::string run_dir(const RunConfig& config, Variant variant, std::uint64_t seed);

/// Generates the dataset into config.data_root and writes its manifest.
void cmd_gen(const RunConfig& config, bool force, std::ostream& log);

/// Trains config.variant() for `seed` into run_dir(...).
TrainResult cmd_train(const RunConfig& config, std::uint64_t seed, bool force, std::ostream& log);

/// Evaluates a checkpoint on the validation split and appends
/// `variant,seed,iou,precision,recall,f1` to <output_root>/eval.csv.
MetricsRecord cmd_eval(const RunConfig& config, const std::string& checkpoint, std::uint64_t seed, std::ostream& log);

inline constexpr const char* kEvalHeader = "variant,seed,iou,precision,recall,f1";

struct AblationCell {
    Variant variant = Variant::sca;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MetricsRecord metrics;  // validation metrics of the best epoch
    int best_epoch = 0;
};

struct AblationRow {
    Variant variant = Variant::sca;
    std::string method;  // "Baseline", "+SA", "+CA", "+SCA"
    Index params = 0;
    bool ok = false;
    MetricsRecord median;
    std::vector<AblationCell> cells;  // one per seed, in config order
};

/// Rows in the fixed order Baseline, +SA, +CA, +SCA restricted to config.variants.
struct AblationTable {
    std::vector<AblationRow> rows;
    const AblationRow* find(Variant v) const;
};

/// Trains every (variant, seed) cell on the same dataset with identical
/// hyper-parameters, writes <output_root>/ablation.csv and ablation.txt, and
/// throws Error(ablate) after writing if any cell failed. With jobs > 1 cells
/// run in that many child processes.
AblationTable cmd_ablate(const RunConfig& config, bool force, int jobs, std::ostream& log);

std::string method_name(Variant v);
double median(std::vector<double> values);
std::string format_ablation_text(const AblationTable& table);

/// Runs the suite, prints one line per item and throws Error(gradcheck) if
/// any item fails.
std::vector<GradcheckItem> cmd_gradcheck(std::uint64_t seed, std::ostream& log);

struct SimilarityResult {
    Eigen::MatrixXd matrix;
    std::string pgm_path;
    std::string csv_path;
};

/// Stage-4 (last encoder stage) diagonal similarity of `image` (a PPM; the first
/// validation image when empty) under `checkpoint`, written to
/// <output_root>/simmatrix.{pgm,csv}.
SimilarityResult cmd_simmatrix(const RunConfig& config, const std::string& checkpoint, const std::string& image,
                               std::ostream& log);

/// [-1,1] -> [0,255] with rounding to nearest.
std::vector<std::uint8_t> similarity_to_gray(const Eigen::MatrixXd& m);

struct VariantParams {
    Variant variant = Variant::sca;
    ParamBreakdown breakdown;
    Index audit = 0;  // scalar count re-read from a serialized checkpoint
};

struct ParamsReport {
    std::vector<VariantParams> variants;
    /// baseline < sca <= ca over the variants present.
    bool ordering_holds = true;
};

ParamsReport cmd_params(const RunConfig& config, std::ostream& log);

} // namespace scanet
