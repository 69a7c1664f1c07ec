#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace scanet {

struct GradcheckItem {
    std::string name;
    std::string kind;  // "primitive", "loss" or "block"
    int shapes = 0;    // random shapes checked
    double worst = 0;  // worst max-relative error over all shapes and inputs
    bool passed = false;
};

struct GradcheckOptions {
    std::uint64_t seed = 0;
    int shapes = 5;
    double eps = 1e-5;
    double tolerance = 1e-5;
};

/// Central-difference checks at 64-bit of every differentiable primitive, the
/// segmentation loss, and each attention block variant. Deterministic in the seed.
std::vector<GradcheckItem> run_gradcheck_suite(const GradcheckOptions& options = {});

/// Names of the primitive items, in report order.
const std::vector<std::string>& gradcheck_primitive_names();

} // namespace scanet
