#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scanet/error.hpp"

namespace scanet {

/// Flat `key = value` text: one entry per line, `#` starts a comment, blank
/// lines are skipped. Keys keep their file order.
struct KeyValue {
    std::string key;
    std::string value;
    int line = 0;
};

/// Throws Error(config) on a line without '=', an empty key or a repeated key.
/// `source` names the input in messages.
std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& source);

std::string read_text_file(const std::string& path);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

double parse_double(const KeyValue& kv);
std::int64_t parse_int(const KeyValue& kv);
std::uint64_t parse_uint(const KeyValue& kv);
bool parse_bool(const KeyValue& kv);

} // namespace scanet
