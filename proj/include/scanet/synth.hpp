#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scanet/rng.hpp"
#include "scanet/tensor.hpp"

namespace scanet {

/// Parameters of the procedural building-footprint generator. Lengths are in
/// pixels, intensities in [0,1].
struct SceneSpec {
    Index height = 64;
    Index width = 64;
    int min_buildings = 3;
    int max_buildings = 12;
    double min_size = 6.0;  // side length of a building's bounding square
    double max_size = 16.0;
    // Relative weights of axis-aligned rectangles, rotated rectangles and L-shapes.
    double weight_rect = 1.0;
    double weight_rotated = 1.0;
    double weight_lshape = 1.0;
    double min_contrast = 0.15;  // roof brightness above the local background
    double max_contrast = 0.40;
    double shadow_offset = 2.0;
    double shadow_strength = 0.35;
    int min_roads = 1;
    int max_roads = 3;
    double min_road_width = 2.5;
    double max_road_width = 5.0;
    double noise_std = 0.03;

    /// Throws Error(config) naming the first invalid field.
    void validate() const;
    bool operator==(const SceneSpec&) const = default;
};

struct Point {
    double x = 0, y = 0;
};
using Polygon = std::vector<Point>;

/// One generated tile. `buildings` are the polygons the mask was rasterized from.
struct SegSample {
    TensorF image;  // [3,H,W], multiples of 1/255
    TensorF mask;   // [1,H,W], 0 or 1
    std::uint64_t seed = 0;
    std::vector<Polygon> buildings;
};

/// Even-odd scanline fill sampled at pixel centres (x + 0.5, y + 0.5). An edge
/// covers the rows whose centre lies in [y0, y1); a span covers the columns
/// whose centre lies in [xa, xb). Returns a row-major H x W 0/1 raster.
std::vector<std::uint8_t> rasterize(const Polygon& poly, Index height, Index width);

/// Fully determined by (seed, spec). Only +, -, *, / and comparisons are used
/// in floating point, so results agree bitwise across conforming platforms.
SegSample generate_scene(std::uint64_t seed, const SceneSpec& spec);

struct Dataset {
    std::uint64_t base_seed = 0;
    SceneSpec spec;
    std::vector<SegSample> train;
    std::vector<SegSample> val;
};

/// Sample seed for global index i: split_seed(base, i). Training samples take
/// indices [0, n_train), validation samples [n_train, n_train + n_val).
std::uint64_t sample_seed(std::uint64_t base_seed, Index global_index);

Dataset build_dataset(std::uint64_t base_seed, Index n_train, Index n_val, const SceneSpec& spec);

// Netpbm I/O -----------------------------------------------------------------

/// Binary P6 from a [3,H,W] tensor; values are rounded to the nearest of 0..255.
void write_ppm(const std::string& path, const TensorF& image);
/// Binary P5 from a [1,H,W] tensor scaled by 255 (so a mask becomes 0/255).
void write_pgm(const std::string& path, const TensorF& gray);
/// Raw 8-bit P5 of an H x W byte raster.
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& bytes, Index height, Index width);

TensorF read_ppm(const std::string& path);
TensorF read_pgm(const std::string& path);

// On-disk dataset ------------------------------------------------------------

/// Writes <root>/{train,val}/<index>_img.ppm, <index>_mask.pgm and
/// <root>/manifest.txt. Refuses to touch an existing manifest unless `force`.
void save_dataset(const Dataset& data, const std::string& root, bool force);

struct KeyValue;

/// `key = value` lines for every SceneSpec field, each key prefixed by `prefix`.
std::string format_scene_spec(const SceneSpec& spec, const std::string& prefix = "");
/// Sets the field called `key` from kv.value; false if no field has that name.
bool set_scene_field(SceneSpec& spec, const std::string& key, const KeyValue& kv);

struct Manifest {
    std::uint64_t base_seed = 0;
    Index n_train = 0;
    Index n_val = 0;
    SceneSpec spec;
    bool operator==(const Manifest&) const = default;
};

std::string format_manifest(const Manifest& m);
Manifest parse_manifest(const std::string& text, const std::string& source = "manifest");

Manifest load_manifest(const std::string& root);
/// Reads back every sample; seeds are recomputed from the manifest and
/// `buildings` is left empty.
Dataset load_dataset(const std::string& root);

} // namespace scanet
