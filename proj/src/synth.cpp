#include "scanet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "scanet/kvfile.hpp"

namespace scanet {

namespace fs = std::filesystem;

void SceneSpec::validate() const {
    auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::config, "scene spec: " + what); };
    check(height >= 32 && height % 32 == 0, "height must be a positive multiple of 32");
    check(width >= 32 && width % 32 == 0, "width must be a positive multiple of 32");
    check(min_buildings >= 0 && min_buildings <= max_buildings, "building count range is empty");
    check(min_size > 0 && min_size <= max_size, "building size range is empty");
    check(weight_rect >= 0 && weight_rotated >= 0 && weight_lshape >= 0 &&
              weight_rect + weight_rotated + weight_lshape > 0,
          "shape weights must be nonnegative with a positive sum");
    check(min_contrast <= max_contrast, "contrast range is empty");
    check(shadow_offset >= 0, "shadow_offset must be >= 0");
    check(shadow_strength >= 0 && shadow_strength <= 1, "shadow_strength must lie in [0,1]");
    check(min_roads >= 0 && min_roads <= max_roads, "road count range is empty");
    check(min_road_width > 0 && min_road_width <= max_road_width, "road width range is empty");
    check(noise_std >= 0, "noise_std must be >= 0");
}

std::vector<std::uint8_t> rasterize(const Polygon& poly, Index height, Index width) {
    std::vector<std::uint8_t> out(std::size_t(height * width), 0);
    const std::size_t n = poly.size();
    if (n < 3) return out;
    std::vector<double> xs;
    for (Index y = 0; y < height; ++y) {
        const double yc = double(y) + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const Point& a = poly[i];
            const Point& b = poly[(i + 1) % n];
            const bool crosses = (a.y <= yc && yc < b.y) || (b.y <= yc && yc < a.y);
            if (crosses) xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            // Columns whose centre x + 0.5 lies in [xs[k], xs[k+1]).
            const double lo = std::ceil(xs[k] - 0.5), hi = std::ceil(xs[k + 1] - 0.5);
            const Index x0 = Index(std::max(lo, 0.0));
            const Index x1 = Index(std::min(hi, double(width)));
            for (Index x = x0; x < x1; ++x) out[std::size_t(y * width + x)] = 1;
        }
    }
    return out;
}

namespace {

struct Box {
    double x0, y0, x1, y1;
    bool overlaps(const Box& o, double gap) const {
        return x0 < o.x1 + gap && o.x0 < x1 + gap && y0 < o.y1 + gap && o.y0 < y1 + gap;
    }
};

Box bounds(const Polygon& p) {
    Box b{p[0].x, p[0].y, p[0].x, p[0].y};
    for (const Point& q : p) {
        b.x0 = std::min(b.x0, q.x);
        b.y0 = std::min(b.y0, q.y);
        b.x1 = std::max(b.x1, q.x);
        b.y1 = std::max(b.y1, q.y);
    }
    return b;
}

// Rotation by the rational parametrisation cos = (1-t^2)/(1+t^2),
// sin = 2t/(1+t^2), t in [-1,1], which spans [-90, 90] degrees without libm.
struct Rotation {
    double c = 1, s = 0;
    static Rotation from(double t) {
        const double d = 1.0 + t * t;
        return {(1.0 - t * t) / d, 2.0 * t / d};
    }
};

Polygon rectangle(double cx, double cy, double hw, double hh, Rotation r) {
    const std::array<Point, 4> local{{{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}}};
    Polygon out;
    for (const Point& p : local) out.push_back({cx + r.c * p.x - r.s * p.y, cy + r.s * p.x + r.c * p.y});
    return out;
}

// Axis-aligned w x h box with one corner notch of size (a*w) x (b*h) removed.
Polygon l_shape(double cx, double cy, double w, double h, double a, double b, int corner) {
    const double x0 = cx - w / 2, y0 = cy - h / 2, nx = a * w, ny = b * h;
    // Notch at the (x1, y1) corner, then mirrored into place.
    Polygon p{{0, 0}, {w, 0}, {w, h - ny}, {w - nx, h - ny}, {w - nx, h}, {0, h}};
    for (Point& q : p) {
        if (corner & 1) q.x = w - q.x;
        if (corner & 2) q.y = h - q.y;
        q.x += x0;
        q.y += y0;
    }
    return p;
}

Polygon translated(const Polygon& p, double dx, double dy) {
    Polygon out = p;
    for (Point& q : out) {
        q.x += dx;
        q.y += dy;
    }
    return out;
}

// Smooth field from a coarse lattice of uniform values, bilinearly sampled at pixel centres.
std::vector<double> low_frequency_field(SplitMix64& rng, Index height, Index width, double amplitude) {
    constexpr int kGrid = 5;
    std::array<double, kGrid * kGrid> lattice{};
    for (double& v : lattice) v = rng.uniform(-amplitude, amplitude);
    std::vector<double> out(std::size_t(height * width));
    for (Index y = 0; y < height; ++y) {
        const double fy = (double(y) + 0.5) / double(height) * (kGrid - 1);
        const int iy = std::min(int(fy), kGrid - 2);
        const double ty = fy - iy;
        for (Index x = 0; x < width; ++x) {
            const double fx = (double(x) + 0.5) / double(width) * (kGrid - 1);
            const int ix = std::min(int(fx), kGrid - 2);
            const double tx = fx - ix;
            const double top = lattice[iy * kGrid + ix] * (1 - tx) + lattice[iy * kGrid + ix + 1] * tx;
            const double bot = lattice[(iy + 1) * kGrid + ix] * (1 - tx) + lattice[(iy + 1) * kGrid + ix + 1] * tx;
            out[std::size_t(y * width + x)] = top * (1 - ty) + bot * ty;
        }
    }
    return out;
}

enum class Shape2D { rect, rotated, lshape };

Shape2D pick_shape(SplitMix64& rng, const SceneSpec& spec) {
    const double total = spec.weight_rect + spec.weight_rotated + spec.weight_lshape;
    const double u = rng.uniform() * total;
    if (u < spec.weight_rect) return Shape2D::rect;
    if (u < spec.weight_rect + spec.weight_rotated) return Shape2D::rotated;
    return Shape2D::lshape;
}

} // namespace

SegSample generate_scene(std::uint64_t seed, const SceneSpec& spec) {
    spec.validate();
    const Index H = spec.height, W = spec.width, P = H * W;
    SplitMix64 rng(seed);

    // Background: a muted base colour plus a smooth luminance field.
    const double base = rng.uniform(0.25, 0.40);
    std::array<double, 3> tint{};
    for (double& t : tint) t = rng.uniform(-0.05, 0.05);
    const std::vector<double> field = low_frequency_field(rng, H, W, 0.08);
    std::vector<double> img(std::size_t(3 * P));
    for (int c = 0; c < 3; ++c)
        for (Index i = 0; i < P; ++i) img[std::size_t(c * P + i)] = base + tint[std::size_t(c)] + field[std::size_t(i)];

    auto paint = [&](const std::vector<std::uint8_t>& cover, const std::array<double, 3>& rgb) {
        for (Index i = 0; i < P; ++i)
            if (cover[std::size_t(i)])
                for (int c = 0; c < 3; ++c) img[std::size_t(c * P + i)] = rgb[std::size_t(c)];
    };
    auto roof_colour = [&] {
        const double level = base + rng.uniform(spec.min_contrast, spec.max_contrast);
        const double warmth = rng.uniform(-0.04, 0.04);
        return std::array<double, 3>{level + warmth, level, level - warmth};
    };

    // Roads: long strips across the tile with roof-like intensity.
    const auto n_roads = rng.integer(spec.min_roads, spec.max_roads);
    const double span = 2.0 * double(std::max(H, W));
    for (std::int64_t r = 0; r < n_roads; ++r) {
        const double cx = rng.uniform(0.0, double(W)), cy = rng.uniform(0.0, double(H));
        const double half_width = 0.5 * rng.uniform(spec.min_road_width, spec.max_road_width);
        Rotation rot = Rotation::from(rng.uniform(-0.3, 0.3));
        if (rng.uniform() < 0.5) rot = {-rot.s, rot.c};  // vertical-ish
        paint(rasterize(rectangle(cx, cy, span, half_width, rot), H, W), roof_colour());
    }

    // Buildings: placed without overlap (including their shadows) where possible.
    const auto n_buildings = rng.integer(spec.min_buildings, spec.max_buildings);
    std::vector<Polygon> buildings;
    std::vector<Box> boxes;
    constexpr int kAttempts = 20;
    for (std::int64_t b = 0; b < n_buildings; ++b) {
        const Shape2D kind = pick_shape(rng, spec);
        const double w = rng.uniform(spec.min_size, spec.max_size);
        const double h = w * rng.uniform(0.6, 1.0);
        const double a = rng.uniform(0.35, 0.6), bb = rng.uniform(0.35, 0.6);
        const int corner = int(rng.integer(0, 3));
        const double t = rng.uniform(-1.0, 1.0);
        for (int attempt = 0; attempt < kAttempts; ++attempt) {
            const double cx = rng.uniform(0.0, double(W)), cy = rng.uniform(0.0, double(H));
            Polygon poly;
            switch (kind) {
            case Shape2D::rect: poly = rectangle(cx, cy, w / 2, h / 2, Rotation{}); break;
            case Shape2D::rotated: poly = rectangle(cx, cy, w / 2, h / 2, Rotation::from(t)); break;
            case Shape2D::lshape: poly = l_shape(cx, cy, w, h, a, bb, corner); break;
            }
            Box box = bounds(poly);
            box.x1 += spec.shadow_offset;
            box.y1 += spec.shadow_offset;
            const bool clash = std::any_of(boxes.begin(), boxes.end(), [&](const Box& o) { return box.overlaps(o, 1.0); });
            if (clash) continue;
            boxes.push_back(box);
            buildings.push_back(std::move(poly));
            break;
        }
    }

    std::vector<std::uint8_t> mask(std::size_t(P), 0);
    std::vector<std::vector<std::uint8_t>> covers;
    for (const Polygon& poly : buildings) {
        covers.push_back(rasterize(poly, H, W));
        for (Index i = 0; i < P; ++i) mask[std::size_t(i)] |= covers.back()[std::size_t(i)];
    }

    // Shadows fall towards +x, +y and never onto a roof.
    const double keep = 1.0 - spec.shadow_strength;
    for (const Polygon& poly : buildings) {
        const auto shade = rasterize(translated(poly, spec.shadow_offset, spec.shadow_offset), H, W);
        for (Index i = 0; i < P; ++i)
            if (shade[std::size_t(i)] && !mask[std::size_t(i)])
                for (int c = 0; c < 3; ++c) img[std::size_t(c * P + i)] *= keep;
    }
    for (const auto& cover : covers) paint(cover, roof_colour());

    SegSample s;
    s.seed = seed;
    s.image = TensorF(Shape{3, H, W});
    s.mask = TensorF(Shape{1, H, W});
    for (Index i = 0; i < 3 * P; ++i) {
        const double v = std::clamp(img[std::size_t(i)] + spec.noise_std * rng.normal(), 0.0, 1.0);
        s.image[i] = float(std::floor(v * 255.0 + 0.5)) / 255.0f;  // same rounding as read_ppm
    }
    for (Index i = 0; i < P; ++i) s.mask[i] = float(mask[std::size_t(i)]);
    s.buildings = std::move(buildings);
    return s;
}

std::uint64_t sample_seed(std::uint64_t base_seed, Index global_index) {
    return split_seed(base_seed, std::uint64_t(global_index));
}

Dataset build_dataset(std::uint64_t base_seed, Index n_train, Index n_val, const SceneSpec& spec) {
    require(n_train >= 1 && n_val >= 1, ErrorKind::config, "build_dataset: n_train and n_val must be >= 1");
    spec.validate();
    Dataset d;
    d.base_seed = base_seed;
    d.spec = spec;
    d.train.reserve(std::size_t(n_train));
    d.val.reserve(std::size_t(n_val));
    for (Index i = 0; i < n_train; ++i) d.train.push_back(generate_scene(sample_seed(base_seed, i), spec));
    for (Index i = 0; i < n_val; ++i) d.val.push_back(generate_scene(sample_seed(base_seed, n_train + i), spec));
    return d;
}

// Netpbm ---------------------------------------------------------------------

namespace {

void write_netpbm(const std::string& path, const char* magic, Index height, Index width,
                  const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    require(bool(out), ErrorKind::io, "cannot write " + path);
    out << magic << '\n' << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    require(bool(out), ErrorKind::io, "write failed: " + path);
}

std::uint8_t to_byte(float v) {
    const double c = std::clamp(double(v), 0.0, 1.0);
    return std::uint8_t(std::floor(c * 255.0 + 0.5));
}

// Header tokens of a binary Netpbm file, skipping '#' comments.
struct NetpbmHeader {
    std::string magic;
    Index width = 0, height = 0, maxval = 0;
};

NetpbmHeader read_header(std::istream& in, const std::string& path) {
    auto token = [&]() {
        std::string t;
        int ch;
        while ((ch = in.get()) != EOF) {
            if (ch == '#') {
                while ((ch = in.get()) != EOF && ch != '\n') {}
                continue;
            }
            if (std::isspace(ch)) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(char(ch));
        }
        require(!t.empty(), ErrorKind::io, "truncated Netpbm header: " + path);
        return t;
    };
    NetpbmHeader h;
    h.magic = token();
    try {
        h.width = std::stol(token());
        h.height = std::stol(token());
        h.maxval = std::stol(token());
    } catch (const std::logic_error&) {
        fail(ErrorKind::io, "malformed Netpbm header: " + path);
    }
    require(h.width >= 1 && h.height >= 1 && h.maxval == 255, ErrorKind::io,
            "unsupported Netpbm geometry or maxval: " + path);
    return h;
}

TensorF read_netpbm(const std::string& path, const char* magic, Index channels) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), ErrorKind::io, "cannot open " + path);
    const NetpbmHeader h = read_header(in, path);
    require(h.magic == magic, ErrorKind::io, path + ": expected " + magic + ", found " + h.magic);
    const Index P = h.width * h.height;
    std::vector<std::uint8_t> bytes(std::size_t(P * channels));
    in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    require(in.gcount() == std::streamsize(bytes.size()), ErrorKind::io, "truncated pixel data: " + path);
    TensorF t(Shape{channels, h.height, h.width});
    for (Index i = 0; i < P; ++i)
        for (Index c = 0; c < channels; ++c) t[c * P + i] = float(bytes[std::size_t(i * channels + c)]) / 255.0f;
    return t;
}

} // namespace

void write_ppm(const std::string& path, const TensorF& image) {
    require(image.shape().rank() == 3 && image.shape()[0] == 3, ErrorKind::shape,
            "write_ppm: expected [3,H,W], got " + image.shape().str());
    const Index H = image.shape()[1], W = image.shape()[2], P = H * W;
    std::vector<std::uint8_t> bytes(std::size_t(3 * P));
    for (Index i = 0; i < P; ++i)
        for (Index c = 0; c < 3; ++c) bytes[std::size_t(3 * i + c)] = to_byte(image[c * P + i]);
    write_netpbm(path, "P6", H, W, bytes);
}

void write_pgm(const std::string& path, const TensorF& gray) {
    require(gray.shape().rank() == 3 && gray.shape()[0] == 1, ErrorKind::shape,
            "write_pgm: expected [1,H,W], got " + gray.shape().str());
    std::vector<std::uint8_t> bytes(std::size_t(gray.size()));
    for (Index i = 0; i < gray.size(); ++i) bytes[std::size_t(i)] = to_byte(gray[i]);
    write_netpbm(path, "P5", gray.shape()[1], gray.shape()[2], bytes);
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& bytes, Index height, Index width) {
    require(Index(bytes.size()) == height * width, ErrorKind::shape, "write_pgm: byte count does not match extents");
    write_netpbm(path, "P5", height, width, bytes);
}

TensorF read_ppm(const std::string& path) { return read_netpbm(path, "P6", 3); }
TensorF read_pgm(const std::string& path) { return read_netpbm(path, "P5", 1); }

// Manifest and dataset directories --------------------------------------------

namespace {

// Field table shared by the manifest writer and parser.
struct SpecField {
    const char* key;
    std::function<std::string(const SceneSpec&)> get;
    std::function<void(SceneSpec&, const KeyValue&)> set;
};

template <typename T>
SpecField field(const char* key, T SceneSpec::*member) {
    if constexpr (std::is_floating_point_v<T>) {
        return {key, [member](const SceneSpec& s) { return format_double(s.*member); },
                [member](SceneSpec& s, const KeyValue& kv) { s.*member = parse_double(kv); }};
    } else {
        return {key, [member](const SceneSpec& s) { return std::to_string(s.*member); },
                [member](SceneSpec& s, const KeyValue& kv) { s.*member = T(parse_int(kv)); }};
    }
}

const std::vector<SpecField>& spec_fields() {
    static const std::vector<SpecField> fields{
        field("height", &SceneSpec::height),
        field("width", &SceneSpec::width),
        field("min_buildings", &SceneSpec::min_buildings),
        field("max_buildings", &SceneSpec::max_buildings),
        field("min_size", &SceneSpec::min_size),
        field("max_size", &SceneSpec::max_size),
        field("weight_rect", &SceneSpec::weight_rect),
        field("weight_rotated", &SceneSpec::weight_rotated),
        field("weight_lshape", &SceneSpec::weight_lshape),
        field("min_contrast", &SceneSpec::min_contrast),
        field("max_contrast", &SceneSpec::max_contrast),
        field("shadow_offset", &SceneSpec::shadow_offset),
        field("shadow_strength", &SceneSpec::shadow_strength),
        field("min_roads", &SceneSpec::min_roads),
        field("max_roads", &SceneSpec::max_roads),
        field("min_road_width", &SceneSpec::min_road_width),
        field("max_road_width", &SceneSpec::max_road_width),
        field("noise_std", &SceneSpec::noise_std),
    };
    return fields;
}

std::string sample_path(const std::string& root, const char* split, Index i, const char* suffix) {
    return (fs::path(root) / split / (std::to_string(i) + suffix)).string();
}

} // namespace

std::string format_scene_spec(const SceneSpec& spec, const std::string& prefix) {
    std::string out;
    for (const SpecField& f : spec_fields()) out += prefix + f.key + " = " + f.get(spec) + "\n";
    return out;
}

bool set_scene_field(SceneSpec& spec, const std::string& key, const KeyValue& kv) {
    const auto& fields = spec_fields();
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const SpecField& f) { return key == f.key; });
    if (it == fields.end()) return false;
    it->set(spec, kv);
    return true;
}

std::string format_manifest(const Manifest& m) {
    std::string out = "# synthetic building-footprint dataset\n";
    out += "base_seed = " + std::to_string(m.base_seed) + "\n";
    out += "n_train = " + std::to_string(m.n_train) + "\n";
    out += "n_val = " + std::to_string(m.n_val) + "\n";
    return out + format_scene_spec(m.spec);
}

Manifest parse_manifest(const std::string& text, const std::string& source) {
    Manifest m;
    bool has_seed = false, has_train = false, has_val = false;
    for (const KeyValue& kv : parse_key_values(text, source)) {
        if (kv.key == "base_seed") {
            m.base_seed = parse_uint(kv);
            has_seed = true;
        } else if (kv.key == "n_train") {
            m.n_train = parse_int(kv);
            has_train = true;
        } else if (kv.key == "n_val") {
            m.n_val = parse_int(kv);
            has_val = true;
        } else {
            require(set_scene_field(m.spec, kv.key, kv), ErrorKind::config,
                    source + ":" + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
        }
    }
    require(has_seed && has_train && has_val, ErrorKind::config, source + ": base_seed, n_train and n_val are required");
    require(m.n_train >= 1 && m.n_val >= 1, ErrorKind::config, source + ": n_train and n_val must be >= 1");
    m.spec.validate();
    return m;
}

void save_dataset(const Dataset& data, const std::string& root, bool force) {
    const fs::path manifest = fs::path(root) / "manifest.txt";
    require(force || !fs::exists(manifest), ErrorKind::io,
            manifest.string() + " already exists; pass --force to regenerate");
    std::error_code ec;
    for (const char* split : {"train", "val"}) {
        fs::create_directories(fs::path(root) / split, ec);
        require(!ec, ErrorKind::io, "cannot create " + (fs::path(root) / split).string() + ": " + ec.message());
    }
    auto write_split = [&](const std::vector<SegSample>& samples, const char* split) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            write_ppm(sample_path(root, split, Index(i), "_img.ppm"), samples[i].image);
            write_pgm(sample_path(root, split, Index(i), "_mask.pgm"), samples[i].mask);
        }
    };
    write_split(data.train, "train");
    write_split(data.val, "val");
    // The manifest goes last so a partial write is never mistaken for a dataset.
    const Manifest m{data.base_seed, Index(data.train.size()), Index(data.val.size()), data.spec};
    std::ofstream out(manifest, std::ios::binary);
    require(bool(out), ErrorKind::io, "cannot write " + manifest.string());
    out << format_manifest(m);
    require(bool(out), ErrorKind::io, "write failed: " + manifest.string());
}

Manifest load_manifest(const std::string& root) {
    const fs::path path = fs::path(root) / "manifest.txt";
    require(fs::exists(path), ErrorKind::io, "no dataset at " + root + " (missing manifest.txt)");
    return parse_manifest(read_text_file(path.string()), path.string());
}

Dataset load_dataset(const std::string& root) {
    const Manifest m = load_manifest(root);
    Dataset d;
    d.base_seed = m.base_seed;
    d.spec = m.spec;
    const Shape img_shape{3, m.spec.height, m.spec.width}, mask_shape{1, m.spec.height, m.spec.width};
    auto read_split = [&](std::vector<SegSample>& out, const char* split, Index n, Index offset) {
        out.reserve(std::size_t(n));
        for (Index i = 0; i < n; ++i) {
            SegSample s;
            s.seed = sample_seed(m.base_seed, offset + i);
            const std::string img_path = sample_path(root, split, i, "_img.ppm");
            const std::string mask_path = sample_path(root, split, i, "_mask.pgm");
            s.image = read_ppm(img_path);
            s.mask = read_pgm(mask_path);
            require(s.image.shape() == img_shape, ErrorKind::data, img_path + ": extents differ from the manifest");
            require(s.mask.shape() == mask_shape, ErrorKind::data, mask_path + ": extents differ from the manifest");
            for (Index k = 0; k < s.mask.size(); ++k)
                if (s.mask[k] != 0.0f && s.mask[k] != 1.0f) fail(ErrorKind::data, mask_path + ": mask values must be 0 or 255");
            out.push_back(std::move(s));
        }
    };
    read_split(d.train, "train", m.n_train, 0);
    read_split(d.val, "val", m.n_val, m.n_train);
    return d;
}

} // namespace scanet
