#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scanet/seg_model.hpp"
#include "scanet/synth.hpp"

namespace scanet {

enum class Precision { f32, f64 };

const char* to_string(Precision p);
Precision parse_precision(const std::string& name);

/// Everything a training run or an ablation depends on. The encoder's
/// variant is the variant trained by `train`; `variants` is the list swept
/// by `ablate` and reported by `params`.
struct RunConfig {
    ModelConfig model{};
    int batch_size = 16;
    int epochs = 20;
    double learning_rate = 1e-3;
    double weight_decay = 1e-2;
    int patience = 10;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<Variant> variants{Variant::baseline, Variant::sa, Variant::ca, Variant::sca};
    std::string data_root = "data";
    std::string output_root = "runs";
    Precision precision = Precision::f32;
    // Dataset generation.
    std::uint64_t data_seed = 7;
    Index n_train = 2000;
    Index n_val = 200;
    SceneSpec scene{};

    Variant variant() const { return model.encoder.variant; }

    /// Throws Error(config) naming the first invalid field.
    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

/// Flat `key = value` text listing every field; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& config);

/// Starts from the defaults and applies the keys present in `text`. Unknown
/// keys and malformed values throw Error(config) with the line number.
RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::string& path);

} // namespace scanet
