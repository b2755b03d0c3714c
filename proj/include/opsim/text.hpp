#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace opsim {

inline std::string to_lower_ascii(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        out.push_back(c);
    }
    return out;
}

/// Trim and collapse internal whitespace runs to a single space.
inline std::string collapse_whitespace(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v') {
            if (!out.empty()) pending_space = true;
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(c);
        }
    }
    return out;
}

/// Lookup key for vocabulary canonicalization: case-folded, whitespace-collapsed.
inline std::string canon_key(std::string_view text) {
    return collapse_whitespace(to_lower_ascii(text));
}

/// Matching form for reply parsing: case-folded, punctuation mapped to spaces,
/// whitespace collapsed. "  Strongly Agree. " -> "strongly agree".
inline std::string match_normalize(std::string_view text) {
    std::string mapped;
    mapped.reserve(text.size());
    for (char c : text) {
        if (c >= 'A' && c <= 'Z') {
            mapped.push_back(static_cast<char>(c - 'A' + 'a'));
        } else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
            mapped.push_back(c);
        } else {
            mapped.push_back(' ');
        }
    }
    return collapse_whitespace(mapped);
}

inline std::vector<std::string> split_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find(' ', start);
        if (end == std::string_view::npos) end = text.size();
        if (end > start) out.emplace_back(text.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

inline bool contains_control_chars(std::string_view text) {
    for (unsigned char c : text) {
        if (c == 0x7f) return true;
        if (c < 0x20 && c != '\t') return true;
    }
    return false;
}

} // namespace opsim
