#include "scanet/config.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

#include "scanet/kvfile.hpp"

namespace scanet {

const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
    if (name == "f32" || name == "float") return Precision::f32;
    if (name == "f64" || name == "double") return Precision::f64;
    fail(ErrorKind::config, "unknown precision '" + name + "' (expected f32 or f64)");
}

void RunConfig::validate() const {
    model.validate();
    scene.validate();
    auto check = [](bool ok, const char* what) { require(ok, ErrorKind::config, what); };
    check(batch_size >= 1, "batch_size must be >= 1");
    check(epochs >= 1, "epochs must be >= 1");
    check(learning_rate > 0, "learning_rate must be > 0");
    check(weight_decay >= 0, "weight_decay must be >= 0");
    check(patience >= 1, "patience must be >= 1");
    check(!seeds.empty(), "seeds must not be empty");
    check(!variants.empty(), "variants must not be empty");
    check(n_train >= 1 && n_val >= 1, "n_train and n_val must be >= 1");
    check(!data_root.empty() && !output_root.empty(), "data_root and output_root must not be empty");
}

namespace {

const char* activation_name(Activation a) {
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
    }
    return "relu";
}

Activation parse_activation(const KeyValue& kv) {
    if (kv.value == "relu") return Activation::relu;
    if (kv.value == "sigmoid") return Activation::sigmoid;
    if (kv.value == "identity") return Activation::identity;
    fail(ErrorKind::config, "line " + std::to_string(kv.line) + ": unknown activation '" + kv.value + "'");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
        out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
    }
    return out;
}

template <typename T, typename F>
std::string join(const T& items, F fmt) {
    std::string out;
    for (const auto& x : items) out += (out.empty() ? "" : ",") + fmt(x);
    return out;
}

template <typename T, typename F>
std::vector<T> parse_list(const KeyValue& kv, F parse_item) {
    std::vector<T> out;
    for (const std::string& item : split_list(kv.value)) out.push_back(parse_item(KeyValue{kv.key, item, kv.line}));
    require(!out.empty(), ErrorKind::config, "line " + std::to_string(kv.line) + ": " + kv.key + " is empty");
    return out;
}

template <std::size_t N>
std::array<Index, N> parse_widths(const KeyValue& kv) {
    const auto v = parse_list<Index>(kv, [](const KeyValue& k) { return Index(parse_int(k)); });
    require(v.size() == N, ErrorKind::config,
            "line " + std::to_string(kv.line) + ": " + kv.key + " needs " + std::to_string(N) + " entries");
    std::array<Index, N> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
}

struct ConfigField {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const KeyValue&)> set;
};

std::string str(Index v) { return std::to_string(v); }

const std::vector<ConfigField>& config_fields() {
    auto i64 = [](const KeyValue& kv) { return parse_int(kv); };
    static const std::vector<ConfigField> fields{
        {"variant", [](const RunConfig& c) { return std::string(to_string(c.model.encoder.variant)); },
         [](RunConfig& c, const KeyValue& kv) { c.model.encoder.variant = parse_variant(kv.value); }},
        {"cardinality", [](const RunConfig& c) { return str(c.model.encoder.sca.cardinality); },
         [=](RunConfig& c, const KeyValue& kv) { c.model.encoder.sca.cardinality = int(i64(kv)); }},
        {"radix", [](const RunConfig& c) { return str(c.model.encoder.sca.radix); },
         [=](RunConfig& c, const KeyValue& kv) { c.model.encoder.sca.radix = int(i64(kv)); }},
        {"reduction", [](const RunConfig& c) { return str(c.model.encoder.sca.reduction); },
         [=](RunConfig& c, const KeyValue& kv) { c.model.encoder.sca.reduction = int(i64(kv)); }},
        {"strip_activation", [](const RunConfig& c) { return std::string(activation_name(c.model.encoder.sca.strip_activation)); },
         [](RunConfig& c, const KeyValue& kv) { c.model.encoder.sca.strip_activation = parse_activation(kv); }},
        {"strip_norm", [](const RunConfig& c) { return std::string(c.model.encoder.sca.strip_norm ? "true" : "false"); },
         [](RunConfig& c, const KeyValue& kv) { c.model.encoder.sca.strip_norm = parse_bool(kv); }},
        {"share_splits", [](const RunConfig& c) { return std::string(c.model.encoder.sca.share_splits ? "true" : "false"); },
         [](RunConfig& c, const KeyValue& kv) { c.model.encoder.sca.share_splits = parse_bool(kv); }},
        {"stem_width", [](const RunConfig& c) { return str(c.model.encoder.stem_width); },
         [=](RunConfig& c, const KeyValue& kv) { c.model.encoder.stem_width = i64(kv); }},
        {"widths", [](const RunConfig& c) { return join(c.model.encoder.widths, str); },
         [](RunConfig& c, const KeyValue& kv) { c.model.encoder.widths = parse_widths<5>(kv); }},
        {"blocks_per_stage", [](const RunConfig& c) { return str(c.model.encoder.blocks_per_stage); },
         [=](RunConfig& c, const KeyValue& kv) { c.model.encoder.blocks_per_stage = int(i64(kv)); }},
        {"decoder_depth", [](const RunConfig& c) { return str(c.model.decoder.depth); },
         [=](RunConfig& c, const KeyValue& kv) { c.model.decoder.depth = int(i64(kv)); }},
        {"decoder_widths", [](const RunConfig& c) { return join(c.model.decoder.widths, str); },
         [](RunConfig& c, const KeyValue& kv) { c.model.decoder.widths = parse_widths<4>(kv); }},
        {"head_width", [](const RunConfig& c) { return str(c.model.decoder.head_width); },
         [=](RunConfig& c, const KeyValue& kv) { c.model.decoder.head_width = i64(kv); }},
        {"nested_kernel", [](const RunConfig& c) { return str(c.model.decoder.nested_kernel); },
         [=](RunConfig& c, const KeyValue& kv) { c.model.decoder.nested_kernel = int(i64(kv)); }},
        {"batch_size", [](const RunConfig& c) { return str(c.batch_size); },
         [=](RunConfig& c, const KeyValue& kv) { c.batch_size = int(i64(kv)); }},
        {"epochs", [](const RunConfig& c) { return str(c.epochs); },
         [=](RunConfig& c, const KeyValue& kv) { c.epochs = int(i64(kv)); }},
        {"learning_rate", [](const RunConfig& c) { return format_double(c.learning_rate); },
         [](RunConfig& c, const KeyValue& kv) { c.learning_rate = parse_double(kv); }},
        {"weight_decay", [](const RunConfig& c) { return format_double(c.weight_decay); },
         [](RunConfig& c, const KeyValue& kv) { c.weight_decay = parse_double(kv); }},
        {"patience", [](const RunConfig& c) { return str(c.patience); },
         [=](RunConfig& c, const KeyValue& kv) { c.patience = int(i64(kv)); }},
        {"seeds", [](const RunConfig& c) { return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }); },
         [](RunConfig& c, const KeyValue& kv) { c.seeds = parse_list<std::uint64_t>(kv, parse_uint); }},
        {"variants", [](const RunConfig& c) { return join(c.variants, [](Variant v) { return std::string(to_string(v)); }); },
         [](RunConfig& c, const KeyValue& kv) {
             c.variants = parse_list<Variant>(kv, [](const KeyValue& k) { return parse_variant(k.value); });
         }},
        {"data_root", [](const RunConfig& c) { return c.data_root; },
         [](RunConfig& c, const KeyValue& kv) { c.data_root = kv.value; }},
        {"output_root", [](const RunConfig& c) { return c.output_root; },
         [](RunConfig& c, const KeyValue& kv) { c.output_root = kv.value; }},
        {"precision", [](const RunConfig& c) { return std::string(to_string(c.precision)); },
         [](RunConfig& c, const KeyValue& kv) { c.precision = parse_precision(kv.value); }},
        {"data_seed", [](const RunConfig& c) { return std::to_string(c.data_seed); },
         [](RunConfig& c, const KeyValue& kv) { c.data_seed = parse_uint(kv); }},
        {"n_train", [](const RunConfig& c) { return str(c.n_train); },
         [=](RunConfig& c, const KeyValue& kv) { c.n_train = i64(kv); }},
        {"n_val", [](const RunConfig& c) { return str(c.n_val); },
         [=](RunConfig& c, const KeyValue& kv) { c.n_val = i64(kv); }},
    };
    return fields;
}

constexpr const char* kScenePrefix = "scene.";

} // namespace

std::string format_config(const RunConfig& config) {
    std::string out;
    for (const ConfigField& f : config_fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
    return out + format_scene_spec(config.scene, kScenePrefix);
}

RunConfig parse_config(const std::string& text, const std::string& source) {
    RunConfig c;
    const auto& fields = config_fields();
    for (const KeyValue& kv : parse_key_values(text, source)) {
        const std::string where = source + ":" + std::to_string(kv.line) + ": ";
        try {
            if (kv.key.rfind(kScenePrefix, 0) == 0) {
                require(set_scene_field(c.scene, kv.key.substr(std::string(kScenePrefix).size()), kv), ErrorKind::config,
                        "unknown key '" + kv.key + "'");
                continue;
            }
            const auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return kv.key == f.key; });
            require(it != fields.end(), ErrorKind::config, "unknown key '" + kv.key + "'");
            it->set(c, kv);
        } catch (const Error& e) {
            fail(ErrorKind::config, where + e.what());
        }
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) { return parse_config(read_text_file(path), path); }

} // namespace scanet
