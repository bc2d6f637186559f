#pragma once

#include <charconv>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "entroflow/error.hpp"

/// Reader for the part of TOML that scenario files use: tables, arrays of tables,
/// dotted and quoted keys, strings, integers, floats, booleans, arrays and inline
/// tables. Dates/times, multi-line strings and special floats are rejected.
namespace entroflow::toml {

class Parser {
public:
    explicit Parser(std::string_view text) : s_(text) {}

    nlohmann::json parse()
    {
        nlohmann::json root = nlohmann::json::object();
        nlohmann::json* current = &root;
        for (;;) {
            skip_blank_lines();
            if (eof()) break;
            if (peek() == '[') {
                current = header(root);
            } else {
                const std::vector<std::string> keys = key_path();
                skip_space();
                expect('=');
                skip_space();
                insert(*current, keys, value());
            }
            end_of_line();
        }
        return root;
    }

private:
    [[noreturn]] void error(const std::string& what) const
    {
        fail(ErrorKind::config_error, "line " + std::to_string(line_) + ": " + what);
    }

    bool eof() const { return pos_ >= s_.size(); }
    char peek() const { return eof() ? '\0' : s_[pos_]; }

    char get()
    {
        if (eof()) error("unexpected end of document");
        const char c = s_[pos_++];
        if (c == '\n') ++line_;
        return c;
    }

    void expect(char c)
    {
        if (peek() != c) error(std::string("expected '") + c + "'");
        get();
    }

    void skip_space()
    {
        while (!eof() && (peek() == ' ' || peek() == '\t')) get();
    }

    void skip_comment()
    {
        if (peek() == '#')
            while (!eof() && peek() != '\n') get();
    }

    void skip_blank_lines()
    {
        for (;;) {
            skip_space();
            skip_comment();
            if (peek() == '\r') get();
            if (peek() == '\n') {
                get();
                continue;
            }
            return;
        }
    }

    /// Whitespace, comments and newlines inside arrays and inline tables.
    void skip_insignificant()
    {
        for (;;) {
            skip_space();
            skip_comment();
            if (peek() == '\n' || peek() == '\r') {
                get();
                continue;
            }
            return;
        }
    }

    void end_of_line()
    {
        skip_space();
        skip_comment();
        if (peek() == '\r') get();
        if (eof()) return;
        if (peek() != '\n') error("unexpected text after value");
        get();
    }

    static bool bare_key_char(char c)
    {
        return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    }

    std::string simple_key()
    {
        if (peek() == '"') return basic_string();
        if (peek() == '\'') return literal_string();
        std::string k;
        while (!eof() && bare_key_char(peek())) k += get();
        if (k.empty()) error("expected a key");
        return k;
    }

    std::vector<std::string> key_path()
    {
        std::vector<std::string> keys{simple_key()};
        for (;;) {
            skip_space();
            if (peek() != '.') return keys;
            get();
            skip_space();
            keys.push_back(simple_key());
        }
    }

    nlohmann::json* header(nlohmann::json& root)
    {
        expect('[');
        const bool array = peek() == '[';
        if (array) get();
        skip_space();
        const std::vector<std::string> keys = key_path();
        skip_space();
        expect(']');
        if (array) expect(']');

        nlohmann::json* node = &root;
        std::string path;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            path += (i ? "." : "") + keys[i];
            const bool last = i + 1 == keys.size();
            nlohmann::json& child = (*node)[keys[i]];
            if (last && array) {
                if (child.is_null()) {
                    child = nlohmann::json::array();
                    arrays_.insert(path);
                }
                if (!child.is_array() || !arrays_.count(path)) error("'" + path + "' is not an array of tables");
                child.push_back(nlohmann::json::object());
                return &child.back();
            }
            if (child.is_null()) child = nlohmann::json::object();
            if (child.is_array() && arrays_.count(path)) {
                node = &child.back();
                continue;
            }
            if (!child.is_object()) error("'" + path + "' is already a value");
            node = &child;
        }
        if (!tables_.insert(path).second) error("table '" + path + "' defined twice");
        return node;
    }

    void insert(nlohmann::json& table, const std::vector<std::string>& keys, nlohmann::json v)
    {
        nlohmann::json* node = &table;
        for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
            nlohmann::json& child = (*node)[keys[i]];
            if (child.is_null()) child = nlohmann::json::object();
            if (!child.is_object()) error("key '" + keys[i] + "' is already a value");
            node = &child;
        }
        if (node->contains(keys.back())) error("duplicate key '" + keys.back() + "'");
        (*node)[keys.back()] = std::move(v);
    }

    nlohmann::json value()
    {
        const char c = peek();
        if (c == '"') {
            if (s_.substr(pos_, 3) == "\"\"\"") error("multi-line strings are not supported");
            return basic_string();
        }
        if (c == '\'') return literal_string();
        if (c == '[') return array();
        if (c == '{') return inline_table();
        if (s_.substr(pos_, 4) == "true") {
            pos_ += 4;
            return true;
        }
        if (s_.substr(pos_, 5) == "false") {
            pos_ += 5;
            return false;
        }
        return number();
    }

    nlohmann::json array()
    {
        expect('[');
        nlohmann::json out = nlohmann::json::array();
        for (;;) {
            skip_insignificant();
            if (peek() == ']') break;
            out.push_back(value());
            skip_insignificant();
            if (peek() == ',') {
                get();
                continue;
            }
            if (peek() != ']') error("expected ',' or ']' in array");
        }
        get();
        return out;
    }

    nlohmann::json inline_table()
    {
        expect('{');
        nlohmann::json out = nlohmann::json::object();
        skip_space();
        if (peek() == '}') {
            get();
            return out;
        }
        for (;;) {
            skip_space();
            const std::vector<std::string> keys = key_path();
            skip_space();
            expect('=');
            skip_space();
            insert(out, keys, value());
            skip_space();
            if (peek() == ',') {
                get();
                continue;
            }
            expect('}');
            return out;
        }
    }

    std::string basic_string()
    {
        expect('"');
        std::string out;
        for (;;) {
            const char c = get();
            if (c == '"') return out;
            if (c == '\n') error("newline in string");
            if (c != '\\') {
                out += c;
                continue;
            }
            switch (const char e = get()) {
            case '"': out += '"'; break;
            case '\\': out += '\\'; break;
            case 'n': out += '\n'; break;
            case 't': out += '\t'; break;
            case 'r': out += '\r'; break;
            case 'b': out += '\b'; break;
            case 'f': out += '\f'; break;
            case 'u': out += unicode_escape(); break;
            default: error(std::string("unknown escape '\\") + e + "'");
            }
        }
    }

    std::string unicode_escape()
    {
        if (pos_ + 4 > s_.size()) error("truncated \\u escape");
        unsigned cp = 0;
        const auto [p, ec] = std::from_chars(s_.data() + pos_, s_.data() + pos_ + 4, cp, 16);
        if (ec != std::errc{} || p != s_.data() + pos_ + 4) error("bad \\u escape");
        pos_ += 4;
        std::string out;
        if (cp < 0x80) {
            out += static_cast<char>(cp);
        } else if (cp < 0x800) {
            out += static_cast<char>(0xC0 | (cp >> 6));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        } else {
            out += static_cast<char>(0xE0 | (cp >> 12));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        }
        return out;
    }

    std::string literal_string()
    {
        expect('\'');
        std::string out;
        for (char c = get(); c != '\''; c = get()) {
            if (c == '\n') error("newline in string");
            out += c;
        }
        return out;
    }

    nlohmann::json number()
    {
        std::string token;
        while (!eof()) {
            const char c = peek();
            if ((c >= '0' && c <= '9') || c == '+' || c == '-' || c == '.' || c == 'e' || c == 'E' || c == '_') {
                if (c != '_') token += c;
                get();
            } else {
                break;
            }
        }
        if (token.empty()) error("expected a value");
        const char* b = token.data() + (token[0] == '+' ? 1 : 0);
        const char* e = token.data() + token.size();
        if (token.find_first_of(".eE") == std::string::npos) {
            std::int64_t i = 0;
            const auto [p, ec] = std::from_chars(b, e, i);
            if (ec == std::errc{} && p == e) return i;
        } else {
            double d = 0.0;
            const auto [p, ec] = std::from_chars(b, e, d);
            if (ec == std::errc{} && p == e) return d;
        }
        error("malformed number '" + token + "'");
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::set<std::string> tables_;
    std::set<std::string> arrays_;
};

inline nlohmann::json parse(std::string_view text)
{
    return Parser(text).parse();
}

}  // namespace entroflow::toml
