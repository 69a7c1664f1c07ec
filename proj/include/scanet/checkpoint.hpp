#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "scanet/tape.hpp"

namespace scanet {

/// On-disk layout, all integers little-endian:
///   "SCANETCK" | u32 version | u64 entry count |
///   per entry: u32 name length, name bytes, u32 rank, rank x u64 extents,
///              u8 dtype tag (1 = f32, 2 = f64), raw little-endian values.
inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'A', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <typename S>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

struct CheckpointEntry {
    std::string name;
    Shape shape;
    DType dtype = DType::f32;
    std::vector<std::uint8_t> bytes;  // raw little-endian values

    Index numel() const { return shape.numel(); }
};

struct CheckpointArchive {
    std::uint32_t version = kCheckpointVersion;
    std::vector<CheckpointEntry> entries;

    /// Scalar count summed over entries (the parameter-count audit).
    Index scalar_count() const;
};

template <typename S>
CheckpointArchive make_archive(const ParameterSet<S>& params);

void write_archive(std::ostream& out, const CheckpointArchive& archive);
/// Throws Error(checkpoint) on a bad magic, unsupported version, truncation
/// or trailing bytes.
CheckpointArchive read_archive(std::istream& in, const std::string& source = "checkpoint");

/// Same archive with every f32 entry converted to f64 (exact).
CheckpointArchive widen_to_f64(const CheckpointArchive& archive);

template <typename S>
void save_checkpoint(const std::string& path, const ParameterSet<S>& params);
CheckpointArchive load_archive(const std::string& path);

/// Copies archive values into `params`. Entry count, names (in order), shapes
/// and dtype must match; otherwise throws Error(checkpoint) naming the first
/// mismatching parameter and leaves `params` untouched.
template <typename S>
void restore_parameters(const CheckpointArchive& archive, ParameterSet<S>& params);

template <typename S>
void load_checkpoint(const std::string& path, ParameterSet<S>& params) {
    restore_parameters(load_archive(path), params);
}

} // namespace scanet
