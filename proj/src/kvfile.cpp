#include "scanet/kvfile.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace scanet {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const KeyValue& kv, const char* expected) {
    fail(ErrorKind::config, "line " + std::to_string(kv.line) + ": " + kv.key + " = '" + kv.value + "' is not " +
                                expected);
}

template <typename T>
T parse_number(const KeyValue& kv, const char* expected) {
    T out{};
    const char* first = kv.value.data();
    const char* last = first + kv.value.size();
    const auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last || kv.value.empty()) bad_value(kv, expected);
    return out;
}

} // namespace

std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& source) {
    std::vector<KeyValue> out;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        const std::string where = source + ":" + std::to_string(line) + ": ";
        require(eq != std::string::npos, ErrorKind::config, where + "expected 'key = value'");
        KeyValue kv{trim(body.substr(0, eq)), trim(body.substr(eq + 1)), line};
        require(!kv.key.empty(), ErrorKind::config, where + "empty key");
        require(seen.insert(kv.key).second, ErrorKind::config, where + "duplicate key '" + kv.key + "'");
        out.push_back(std::move(kv));
    }
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), ErrorKind::io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

double parse_double(const KeyValue& kv) { return parse_number<double>(kv, "a number"); }
std::int64_t parse_int(const KeyValue& kv) { return parse_number<std::int64_t>(kv, "an integer"); }
std::uint64_t parse_uint(const KeyValue& kv) { return parse_number<std::uint64_t>(kv, "an unsigned integer"); }

bool parse_bool(const KeyValue& kv) {
    if (kv.value == "true" || kv.value == "1") return true;
    if (kv.value == "false" || kv.value == "0") return false;
    bad_value(kv, "a boolean");
}

} // namespace scanet
