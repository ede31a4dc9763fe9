#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dlmlab/common.hpp"

namespace dlmlab {

// Recognizer patterns (fixed, documented):
//   email: [A-Za-z0-9._%+-]+ @ one-or-more dotted labels, final TLD >= 2 letters
//   phone: NNN-NNN-NNNN or (NNN) NNN-NNNN, not touching adjacent digits
// Matches are non-overlapping, leftmost-longest across both types; emails are
// lowercased when collected into entity sets.

struct PiiSpan {
    int64_t start = 0;  // byte offset, inclusive
    int64_t end = 0;    // byte offset, exclusive
    std::string type;   // "email" | "phone"
    std::string surface;

    bool operator==(const PiiSpan& o) const {
        return start == o.start && end == o.end && type == o.type && surface == o.surface;
    }
};

namespace detail {

inline const std::regex& email_re() {
    static const std::regex re(R"(([A-Za-z0-9._%+-]+)@([A-Za-z0-9-]+\.)+[A-Za-z]{2,})");
    return re;
}

inline const std::regex& phone_re() {
    static const std::regex re(R"(\(\d{3}\) \d{3}-\d{4}|\d{3}-\d{3}-\d{4})");
    return re;
}

inline bool digit_at(std::string_view text, int64_t i) {
    return i >= 0 && i < static_cast<int64_t>(text.size()) &&
           std::isdigit(static_cast<unsigned char>(text[static_cast<size_t>(i)]));
}

inline std::vector<PiiSpan> scan(std::string_view text, const std::regex& re, const char* type,
                                 bool digit_boundaries) {
    std::vector<PiiSpan> out;
    auto begin = std::cregex_iterator(text.data(), text.data() + text.size(), re);
    for (auto it = begin; it != std::cregex_iterator(); ++it) {
        const auto& m = *it;
        const int64_t s = static_cast<int64_t>(m.position(0));
        const int64_t e = s + static_cast<int64_t>(m.length(0));
        if (digit_boundaries && (digit_at(text, s - 1) || digit_at(text, e))) continue;
        out.push_back(PiiSpan{s, e, type, std::string(m.str(0))});
    }
    return out;
}

}  // namespace detail

inline std::vector<PiiSpan> find_email_spans(std::string_view text) {
    return detail::scan(text, detail::email_re(), "email", false);
}

inline std::vector<PiiSpan> find_phone_spans(std::string_view text) {
    return detail::scan(text, detail::phone_re(), "phone", true);
}

// Both recognizers merged into one non-overlapping leftmost-longest list
// (a phone-shaped local part inside an email yields only the email).
inline std::vector<PiiSpan> find_pii_spans(std::string_view text) {
    std::vector<PiiSpan> all = find_email_spans(text);
    auto phones = find_phone_spans(text);
    all.insert(all.end(), phones.begin(), phones.end());
    std::sort(all.begin(), all.end(), [](const PiiSpan& a, const PiiSpan& b) {
        if (a.start != b.start) return a.start < b.start;
        return a.end > b.end;  // longest first at equal starts
    });
    std::vector<PiiSpan> out;
    int64_t cursor = 0;
    for (auto& s : all) {
        if (s.start >= cursor) {
            cursor = s.end;
            out.push_back(std::move(s));
        }
    }
    return out;
}

// EntitySet: deduplicated (type, normalized surface) pairs; the R(.) of the
// metric formulas. Emails are case-normalized, phones kept verbatim.
using EntitySet = std::set<std::pair<std::string, std::string>>;

inline std::string normalize_entity(const std::string& type, std::string surface) {
    if (type == "email") {
        for (auto& c : surface) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return surface;
}

inline EntitySet extract_entities(std::string_view text) {
    EntitySet out;
    for (const auto& s : find_pii_spans(text)) {
        out.emplace(s.type, normalize_entity(s.type, s.surface));
    }
    return out;
}

inline EntitySet find_emails(std::string_view text) {
    EntitySet out;
    for (const auto& s : find_email_spans(text)) {
        out.emplace(s.type, normalize_entity(s.type, s.surface));
    }
    return out;
}

inline EntitySet find_phones(std::string_view text) {
    EntitySet out;
    for (const auto& s : find_phone_spans(text)) out.emplace(s.type, s.surface);
    return out;
}

}  // namespace dlmlab
