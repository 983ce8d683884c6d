#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ctree::text {

struct Token {
    std::string text;
    std::size_t offset = 0;  // byte offset into the source string
    bool is_word = false;
};

inline bool is_word_byte(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_' || c == '\'' ||
           c == '-' || c >= 0x80;
}

inline bool is_space_byte(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

/// Splits text into words (runs of letters, digits, '_', '\'', '-' and any
/// non-ASCII bytes) and single-character punctuation tokens. Whitespace is
/// dropped.
inline std::vector<Token> tokenize(std::string_view s) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (is_space_byte(c)) {
            ++i;
        } else if (is_word_byte(c)) {
            const std::size_t start = i;
            while (i < s.size() && is_word_byte(static_cast<unsigned char>(s[i]))) ++i;
            out.push_back({std::string(s.substr(start, i - start)), start, true});
        } else {
            out.push_back({std::string(1, s[i]), i, false});
            ++i;
        }
    }
    return out;
}

/// Index (in tokenize order) of the first word token equal to `word`.
inline std::ptrdiff_t find_word(const std::vector<Token>& tokens, std::string_view word) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].is_word && tokens[i].text == word) return static_cast<std::ptrdiff_t>(i);
    }
    return -1;
}

/// Replaces the token at `index` with `replacement`, leaving all other bytes untouched.
inline std::string replace_token(std::string_view source, const std::vector<Token>& tokens, std::size_t index,
                                 std::string_view replacement) {
    const auto& t = tokens.at(index);
    std::string out(source.substr(0, t.offset));
    out += replacement;
    out += source.substr(t.offset + t.text.size());
    return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space_byte(static_cast<unsigned char>(s[i]))) ++i;
        const std::size_t start = i;
        while (i < s.size() && !is_space_byte(static_cast<unsigned char>(s[i]))) ++i;
        if (i > start) out.emplace_back(s.substr(start, i - start));
    }
    return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

} // namespace ctree::text
