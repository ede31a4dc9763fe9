#pragma once

// Experiment configuration files: a documented TOML subset or plain JSON,
// both canonicalized to the same JSON value before digesting, so equivalent
// configs in either syntax share one run identity.
//
// TOML subset accepted:
//   - `key = value` pairs with bare keys [A-Za-z0-9_-]+
//   - values: basic "strings" (\\ \" \n \t \r escapes), integers, floats,
//     true/false, single-line arrays of scalars
//   - [table] headers (one level) and [[array-of-tables]] headers
//   - # comments and blank lines
// Not accepted (rejected loudly): dotted keys, nested tables deeper than one
// level, multiline strings/arrays, dates.

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dlmlab/common.hpp"

#include "json.hpp"

namespace dlmlab {

// configuration mistakes get their own type so the CLI can map them to a
// distinct exit code
struct config_error : error {
    explicit config_error(const std::string& msg) : error(msg) {}
};

template <class... Args>
[[noreturn]] void config_fail(const Args&... args) {
    throw config_error(strcat_all(args...));
}

template <class... Args>
void config_require(bool cond, const Args&... args) {
    if (!cond) config_fail(args...);
}

namespace detail_config {

struct TomlParser {
    std::string_view src;
    size_t at = 0;
    int line = 1;

    [[noreturn]] void err(const std::string& what) const {
        config_fail("toml parse error at line ", line, ": ", what);
    }

    bool done() const { return at >= src.size(); }
    char peek() const { return src[at]; }
    char take() {
        char c = src[at++];
        if (c == '\n') ++line;
        return c;
    }

    void skip_ws(bool newlines) {
        while (!done()) {
            char c = peek();
            if (c == '#') {
                while (!done() && peek() != '\n') take();
            } else if (c == ' ' || c == '\t' || c == '\r' || (newlines && c == '\n')) {
                take();
            } else {
                break;
            }
        }
    }

    static bool key_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    }

    std::string parse_key() {
        std::string k;
        while (!done() && key_char(peek())) k.push_back(take());
        if (k.empty()) err("expected a key");
        return k;
    }

    std::string parse_string() {
        if (done() || take() != '"') err("expected '\"'");
        std::string out;
        while (true) {
            if (done()) err("unterminated string");
            char c = take();
            if (c == '"') break;
            if (c == '\n') err("newline inside string");
            if (c == '\\') {
                if (done()) err("unterminated escape");
                char e = take();
                switch (e) {
                    case '"': out.push_back('"'); break;
                    case '\\': out.push_back('\\'); break;
                    case 'n': out.push_back('\n'); break;
                    case 't': out.push_back('\t'); break;
                    case 'r': out.push_back('\r'); break;
                    default: err(strcat_all("unsupported escape '\\", std::string(1, e), "'"));
                }
            } else {
                out.push_back(c);
            }
        }
        return out;
    }

    nlohmann::json parse_scalar() {
        if (done()) err("expected a value");
        char c = peek();
        if (c == '"') return parse_string();
        if (c == '[') {
            take();
            nlohmann::json arr = nlohmann::json::array();
            skip_ws(false);
            if (!done() && peek() == ']') {
                take();
                return arr;
            }
            while (true) {
                skip_ws(false);
                if (!done() && peek() == '[') err("nested arrays are not supported");
                arr.push_back(parse_scalar());
                skip_ws(false);
                if (done()) err("unterminated array");
                char d = take();
                if (d == ']') break;
                if (d != ',') err("expected ',' or ']' in array");
            }
            return arr;
        }
        // bare token: bool or number
        std::string tok;
        while (!done()) {
            char d = peek();
            if (d == ' ' || d == '\t' || d == '\r' || d == '\n' || d == ',' || d == ']' ||
                d == '#')
                break;
            tok.push_back(take());
        }
        if (tok == "true") return true;
        if (tok == "false") return false;
        if (tok.empty()) err("expected a value");
        const bool floaty = tok.find_first_of(".eE") != std::string::npos &&
                            tok.find_first_not_of("+-0123456789.eE") == std::string::npos;
        try {
            size_t used = 0;
            if (floaty) {
                double v = std::stod(tok, &used);
                if (used == tok.size()) return v;
            } else {
                int64_t v = std::stoll(tok, &used);
                if (used == tok.size()) return v;
            }
        } catch (const std::exception&) {
        }
        err(strcat_all("cannot parse value '", tok, "'"));
    }

    void end_of_line() {
        skip_ws(false);
        if (done()) return;
        if (peek() != '\n') err("trailing characters after value");
    }

    nlohmann::json parse_document() {
        nlohmann::json root = nlohmann::json::object();
        nlohmann::json* target = &root;
        while (true) {
            skip_ws(true);
            if (done()) break;
            if (peek() == '[') {
                take();
                const bool array_table = !done() && peek() == '[';
                if (array_table) take();
                skip_ws(false);
                std::string name = parse_key();
                skip_ws(false);
                if (done() || peek() == '.') err("dotted table names are not supported");
                if (take() != ']') err("expected ']' after table name");
                if (array_table && (done() || take() != ']'))
                    err("expected ']]' after array-of-tables name");
                end_of_line();
                if (array_table) {
                    if (!root.contains(name)) root[name] = nlohmann::json::array();
                    else if (!root[name].is_array())
                        err(strcat_all("'", name, "' is both a table and an array of tables"));
                    root[name].push_back(nlohmann::json::object());
                    target = &root[name].back();
                } else {
                    if (root.contains(name))
                        err(strcat_all("table '", name, "' defined twice"));
                    root[name] = nlohmann::json::object();
                    target = &root[name];
                }
                continue;
            }
            std::string key = parse_key();
            skip_ws(false);
            if (done() || take() != '=') err(strcat_all("expected '=' after key '", key, "'"));
            skip_ws(false);
            if ((*target).contains(key)) err(strcat_all("key '", key, "' set twice"));
            (*target)[key] = parse_scalar();
            end_of_line();
        }
        return root;
    }
};

inline void emit_toml_value(std::string& out, const nlohmann::json& v) {
    switch (v.type()) {
        case nlohmann::json::value_t::string:
        case nlohmann::json::value_t::boolean:
        case nlohmann::json::value_t::number_integer:
        case nlohmann::json::value_t::number_unsigned:
        case nlohmann::json::value_t::number_float:
            out += v.dump();  // JSON scalar syntax is valid in the TOML subset
            break;
        case nlohmann::json::value_t::array: {
            out += '[';
            for (size_t i = 0; i < v.size(); ++i) {
                if (i) out += ", ";
                emit_toml_value(out, v[i]);
            }
            out += ']';
            break;
        }
        default:
            fail("emit_toml: unsupported nested value ", v.dump());
    }
}

}  // namespace detail_config

// parse a config file's contents; `path` only picks the syntax (.json or .toml)
inline nlohmann::json parse_config_text(std::string_view text, std::string_view path) {
    const bool json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
    if (json) {
        nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
        config_require(!j.is_discarded(), "invalid JSON in ", path);
        config_require(j.is_object(), "config root must be an object: ", path);
        return j;
    }
    detail_config::TomlParser p;
    p.src = text;
    return p.parse_document();
}

inline nlohmann::json load_config_file(const std::string& path) {
    return parse_config_text(read_file(path), path);
}

// canonical form: nlohmann objects iterate in sorted key order, so dump() is
// already a canonical serialization of the parsed value
inline std::string canonical_config_dump(const nlohmann::json& j) { return j.dump(2); }

inline uint64_t config_digest_value(const nlohmann::json& j) { return fnv1a64(j.dump()); }

inline std::string config_digest_hex(const nlohmann::json& j) {
    return hex64(config_digest_value(j));
}

// canonical TOML rendering: top-level scalars first, then [tables], then
// [[arrays of tables]], keys in sorted order throughout
inline std::string emit_canonical_toml(const nlohmann::json& root) {
    require(root.is_object(), "emit_toml: root must be an object");
    std::string out;
    auto emit_pairs = [&out](const nlohmann::json& obj) {
        for (const auto& [k, v] : obj.items()) {
            require(!v.is_object() && !(v.is_array() && !v.empty() && v[0].is_object()),
                    "emit_toml: tables nested deeper than one level: ", k);
            out += k;
            out += " = ";
            detail_config::emit_toml_value(out, v);
            out += '\n';
        }
    };
    for (const auto& [k, v] : root.items()) {
        if (v.is_object() || (v.is_array() && !v.empty() && v[0].is_object())) continue;
        out += k;
        out += " = ";
        detail_config::emit_toml_value(out, v);
        out += '\n';
    }
    for (const auto& [k, v] : root.items()) {
        if (!v.is_object()) continue;
        out += "\n[";
        out += k;
        out += "]\n";
        emit_pairs(v);
    }
    for (const auto& [k, v] : root.items()) {
        if (!(v.is_array() && !v.empty() && v[0].is_object())) continue;
        for (const auto& elem : v) {
            require(elem.is_object(), "emit_toml: mixed array of tables and scalars: ", k);
            out += "\n[[";
            out += k;
            out += "]]\n";
            emit_pairs(elem);
        }
    }
    return out;
}

}  // namespace dlmlab
