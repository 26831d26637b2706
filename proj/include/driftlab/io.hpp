#pragma once

#include "driftlab/types.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace driftlab::io {

// Raw logs carry 17 significant digits (exact double round-trip); report CSVs
// carry 4 decimals.
std::string format_full(double x);
std::string format_report(double x);

// Minimal JSON writer with insertion-ordered keys. Serialization is fully
// deterministic: same values in, same bytes out.
class JsonValue {
public:
    static JsonValue object();
    static JsonValue array();
    static JsonValue number(double x);
    static JsonValue integer(std::int64_t x);
    static JsonValue boolean(bool b);
    static JsonValue string(std::string s);

    JsonValue& set(const std::string& key, JsonValue v); // object
    JsonValue& push(JsonValue v);                        // array

    std::string dump() const;

private:
    enum class Kind { object, array, number, integer, boolean, string };
    Kind kind_ = Kind::object;
    double num_ = 0.0;
    std::int64_t int_ = 0;
    bool bool_ = false;
    std::string str_;
    std::vector<std::pair<std::string, JsonValue>> members_;
    std::vector<JsonValue> elements_;
};

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);
void append_text_file(const std::string& path, const std::string& contents);

// FNV-1a over file bytes; used for manifest entries and determinism checks.
std::uint64_t fnv1a_file(const std::string& path);
std::uint64_t fnv1a_bytes(const std::string& bytes);

// Flat key=value config text: dotted section prefixes, '#' comments, blank
// lines ignored. Duplicate keys rejected.
std::map<std::string, std::string> parse_flat_config(const std::string& text);

} // namespace driftlab::io
