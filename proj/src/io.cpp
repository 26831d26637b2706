#include "driftlab/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace driftlab::io {

std::string format_full(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string format_report(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", x);
    return buf;
}

JsonValue JsonValue::object() {
    JsonValue v;
    v.kind_ = Kind::object;
    return v;
}

JsonValue JsonValue::array() {
    JsonValue v;
    v.kind_ = Kind::array;
    return v;
}

JsonValue JsonValue::number(double x) {
    JsonValue v;
    v.kind_ = Kind::number;
    v.num_ = x;
    return v;
}

JsonValue JsonValue::integer(std::int64_t x) {
    JsonValue v;
    v.kind_ = Kind::integer;
    v.int_ = x;
    return v;
}

JsonValue JsonValue::boolean(bool b) {
    JsonValue v;
    v.kind_ = Kind::boolean;
    v.bool_ = b;
    return v;
}

JsonValue JsonValue::string(std::string s) {
    JsonValue v;
    v.kind_ = Kind::string;
    v.str_ = std::move(s);
    return v;
}

JsonValue& JsonValue::set(const std::string& key, JsonValue v) {
    members_.emplace_back(key, std::move(v));
    return *this;
}

JsonValue& JsonValue::push(JsonValue v) {
    elements_.push_back(std::move(v));
    return *this;
}

namespace {

void escape_into(std::string& out, const std::string& s) {
    out += '"';
    for (const char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '\r': out += "\\r"; break;
        default: out += c;
        }
    }
    out += '"';
}

} // namespace

std::string JsonValue::dump() const {
    std::string out;
    switch (kind_) {
    case Kind::number:
        out = format_full(num_);
        break;
    case Kind::integer:
        out = std::to_string(int_);
        break;
    case Kind::boolean:
        out = bool_ ? "true" : "false";
        break;
    case Kind::string:
        escape_into(out, str_);
        break;
    case Kind::array:
        out = "[";
        for (std::size_t i = 0; i < elements_.size(); ++i) {
            if (i > 0) {
                out += ",";
            }
            out += elements_[i].dump();
        }
        out += "]";
        break;
    case Kind::object:
        out = "{";
        for (std::size_t i = 0; i < members_.size(); ++i) {
            if (i > 0) {
                out += ",";
            }
            escape_into(out, members_[i].first);
            out += ":";
            out += members_[i].second.dump();
        }
        out += "}";
        break;
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) {
        throw std::runtime_error("write failed: " + path);
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open for reading: " + path);
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void append_text_file(const std::string& path, const std::string& contents) {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    if (!f) {
        throw std::runtime_error("cannot open for appending: " + path);
    }
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

std::uint64_t fnv1a_bytes(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a_file(const std::string& path) {
    return fnv1a_bytes(read_text_file(path));
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) {
        return "";
    }
    return s.substr(a, b - a + 1);
}

} // namespace

std::map<std::string, std::string> parse_flat_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing '='");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        }
        if (kv.count(key)) {
            throw std::invalid_argument("config: duplicate key '" + key + "'");
        }
        kv[key] = value;
    }
    return kv;
}

} // namespace driftlab::io
