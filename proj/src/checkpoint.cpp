#include "scanet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace scanet {

namespace {

template <typename U>
void put_le(std::ostream& out, U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::string& source, const char* what) {
    unsigned char buf[sizeof(U)];
    in.read(reinterpret_cast<char*>(buf), sizeof(U));
    require(in.gcount() == std::streamsize(sizeof(U)), ErrorKind::checkpoint,
            source + ": truncated while reading " + what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(buf[i]) << (8 * i);
    return v;
}

std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }

// Value bits of S as an unsigned integer of the same width.
template <typename S>
using Bits = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;

} // namespace

Index CheckpointArchive::scalar_count() const {
    Index n = 0;
    for (const auto& e : entries) n += e.numel();
    return n;
}

template <typename S>
CheckpointArchive make_archive(const ParameterSet<S>& params) {
    CheckpointArchive a;
    for (const auto& p : params) {
        CheckpointEntry e{p.name, p.value.shape(), dtype_of<S>(), {}};
        e.bytes.resize(std::size_t(p.value.size()) * sizeof(S));
        for (Index i = 0; i < p.value.size(); ++i) {
            Bits<S> bits;
            std::memcpy(&bits, p.value.data() + i, sizeof(S));
            for (std::size_t b = 0; b < sizeof(S); ++b)
                e.bytes[std::size_t(i) * sizeof(S) + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
        a.entries.push_back(std::move(e));
    }
    return a;
}

void write_archive(std::ostream& out, const CheckpointArchive& a) {
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put_le<std::uint32_t>(out, a.version);
    put_le<std::uint64_t>(out, a.entries.size());
    for (const auto& e : a.entries) {
        put_le<std::uint32_t>(out, std::uint32_t(e.name.size()));
        out.write(e.name.data(), std::streamsize(e.name.size()));
        put_le<std::uint32_t>(out, std::uint32_t(e.shape.rank()));
        for (int d = 0; d < e.shape.rank(); ++d) put_le<std::uint64_t>(out, std::uint64_t(e.shape[d]));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
        out.write(reinterpret_cast<const char*>(e.bytes.data()), std::streamsize(e.bytes.size()));
    }
}

CheckpointArchive read_archive(std::istream& in, const std::string& source) {
    char magic[sizeof kCheckpointMagic];
    in.read(magic, sizeof magic);
    require(in.gcount() == std::streamsize(sizeof magic) && std::memcmp(magic, kCheckpointMagic, sizeof magic) == 0,
            ErrorKind::checkpoint, source + ": not a checkpoint (bad magic)");
    CheckpointArchive a;
    a.version = get_le<std::uint32_t>(in, source, "version");
    require(a.version == kCheckpointVersion, ErrorKind::checkpoint,
            source + ": unsupported format version " + std::to_string(a.version) + " (expected " +
                std::to_string(kCheckpointVersion) + ")");
    const auto count = get_le<std::uint64_t>(in, source, "entry count");
    for (std::uint64_t k = 0; k < count; ++k) {
        CheckpointEntry e;
        const auto len = get_le<std::uint32_t>(in, source, "name length");
        require(len <= 4096, ErrorKind::checkpoint, source + ": implausible name length in entry " + std::to_string(k));
        e.name.resize(len);
        in.read(e.name.data(), len);
        require(in.gcount() == std::streamsize(len), ErrorKind::checkpoint, source + ": truncated name");
        const auto rank = get_le<std::uint32_t>(in, source, "rank");
        require(rank <= std::uint32_t(Shape::kMaxRank), ErrorKind::checkpoint, source + ": " + e.name + ": rank too large");
        std::vector<Index> dims;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto ext = get_le<std::uint64_t>(in, source, "extent");
            require(ext >= 1 && ext < (std::uint64_t(1) << 40), ErrorKind::checkpoint, source + ": " + e.name + ": bad extent");
            dims.push_back(Index(ext));
        }
        switch (dims.size()) {
        case 0: e.shape = Shape{}; break;
        case 1: e.shape = Shape{dims[0]}; break;
        case 2: e.shape = Shape{dims[0], dims[1]}; break;
        case 3: e.shape = Shape{dims[0], dims[1], dims[2]}; break;
        default: e.shape = Shape{dims[0], dims[1], dims[2], dims[3]}; break;
        }
        const auto tag = get_le<std::uint8_t>(in, source, "dtype");
        require(tag == std::uint8_t(DType::f32) || tag == std::uint8_t(DType::f64), ErrorKind::checkpoint,
                source + ": " + e.name + ": unknown dtype tag " + std::to_string(tag));
        e.dtype = DType(tag);
        e.bytes.resize(std::size_t(e.numel()) * dtype_size(e.dtype));
        in.read(reinterpret_cast<char*>(e.bytes.data()), std::streamsize(e.bytes.size()));
        require(in.gcount() == std::streamsize(e.bytes.size()), ErrorKind::checkpoint,
                source + ": " + e.name + ": truncated values");
        a.entries.push_back(std::move(e));
    }
    require(in.peek() == std::char_traits<char>::eof(), ErrorKind::checkpoint, source + ": trailing bytes after last entry");
    return a;
}

CheckpointArchive widen_to_f64(const CheckpointArchive& a) {
    CheckpointArchive out = a;
    for (auto& e : out.entries) {
        if (e.dtype != DType::f32) continue;
        std::vector<std::uint8_t> wide(std::size_t(e.numel()) * 8);
        for (Index i = 0; i < e.numel(); ++i) {
            std::uint32_t bits = 0;
            for (std::size_t b = 0; b < 4; ++b) bits |= std::uint32_t(e.bytes[std::size_t(i) * 4 + b]) << (8 * b);
            float f;
            std::memcpy(&f, &bits, 4);
            const double d = f;
            std::uint64_t wbits;
            std::memcpy(&wbits, &d, 8);
            for (std::size_t b = 0; b < 8; ++b) wide[std::size_t(i) * 8 + b] = static_cast<std::uint8_t>(wbits >> (8 * b));
        }
        e.bytes = std::move(wide);
        e.dtype = DType::f64;
    }
    return out;
}

template <typename S>
void save_checkpoint(const std::string& path, const ParameterSet<S>& params) {
    // Write then rename so an interrupted save never leaves a torn file.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(bool(out), ErrorKind::io, "cannot write " + tmp);
        write_archive(out, make_archive(params));
        out.flush();
        require(bool(out), ErrorKind::io, "write failed: " + tmp);
    }
    require(std::rename(tmp.c_str(), path.c_str()) == 0, ErrorKind::io, "cannot rename " + tmp + " to " + path);
}

CheckpointArchive load_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), ErrorKind::io, "cannot open " + path);
    return read_archive(in, path);
}

template <typename S>
void restore_parameters(const CheckpointArchive& a, ParameterSet<S>& params) {
    std::size_t k = 0;
    for (const auto& p : params) {
        require(k < a.entries.size(), ErrorKind::checkpoint,
                "checkpoint does not match the model: first mismatching parameter '" + p.name + "' (missing)");
        const CheckpointEntry& e = a.entries[k++];
        const std::string where = "checkpoint does not match the model: first mismatching parameter '" + p.name + "'";
        require(e.name == p.name, ErrorKind::checkpoint, where + " (checkpoint has '" + e.name + "')");
        require(e.shape == p.value.shape(), ErrorKind::checkpoint,
                where + " (shape " + e.shape.str() + " vs " + p.value.shape().str() + ")");
        require(e.dtype == dtype_of<S>(), ErrorKind::checkpoint, where + " (dtype differs)");
    }
    if (k < a.entries.size())
        fail(ErrorKind::checkpoint,
             "checkpoint does not match the model: first mismatching parameter '" + a.entries[k].name + "' (not in the model)");
    k = 0;
    for (auto& p : params) {
        const CheckpointEntry& e = a.entries[k++];
        for (Index i = 0; i < p.value.size(); ++i) {
            Bits<S> bits = 0;
            for (std::size_t b = 0; b < sizeof(S); ++b)
                bits |= Bits<S>(e.bytes[std::size_t(i) * sizeof(S) + b]) << (8 * b);
            std::memcpy(p.value.data() + i, &bits, sizeof(S));
        }
    }
}

#define SCANET_INSTANTIATE_CKPT(S)                                                 \
    template CheckpointArchive make_archive(const ParameterSet<S>&);               \
    template void save_checkpoint(const std::string&, const ParameterSet<S>&);     \
    template void restore_parameters(const CheckpointArchive&, ParameterSet<S>&);

SCANET_INSTANTIATE_CKPT(float)
SCANET_INSTANTIATE_CKPT(double)

} // namespace scanet
