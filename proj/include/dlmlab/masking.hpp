#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlmlab/common.hpp"
#include "dlmlab/corpus.hpp"
#include "dlmlab/rng.hpp"

namespace dlmlab {

// Mask convention: bits[i] = 1 means position i is hidden (to be
// reconstructed), 0 means revealed context. k counts *revealed* tokens in the
// budget modes, so a budget mask always has exactly n-k ones.
using Mask = std::vector<char>;

enum class MaskMode {
    prefix,          // first k revealed
    suffix,          // last k revealed
    edge,            // ceil(k/2) front + floor(k/2) back revealed
    middle,          // k revealed centered at floor((n-k)/2)
    random_subset,   // uniformly random k revealed (seeded)
    targeted,        // only entity spans hidden
    dynamic_prefix,  // revealed up to the first entity, hidden from there on
    prompt_cond,     // chat: response hidden
    response_cond,   // chat: prompt hidden
};

inline const char* mask_mode_name(MaskMode m) {
    switch (m) {
        case MaskMode::prefix: return "prefix";
        case MaskMode::suffix: return "suffix";
        case MaskMode::edge: return "edge";
        case MaskMode::middle: return "middle";
        case MaskMode::random_subset: return "random";
        case MaskMode::targeted: return "targeted";
        case MaskMode::dynamic_prefix: return "dynamic_prefix";
        case MaskMode::prompt_cond: return "prompt_cond";
        case MaskMode::response_cond: return "response_cond";
    }
    return "?";
}

inline MaskMode parse_mask_mode(std::string_view s) {
    for (MaskMode m : {MaskMode::prefix, MaskMode::suffix, MaskMode::edge, MaskMode::middle,
                       MaskMode::random_subset, MaskMode::targeted, MaskMode::dynamic_prefix,
                       MaskMode::prompt_cond, MaskMode::response_cond}) {
        if (s == mask_mode_name(m)) return m;
    }
    fail("unknown mask mode '", s, "'");
}

inline bool is_budget_mode(MaskMode m) {
    return m == MaskMode::prefix || m == MaskMode::suffix || m == MaskMode::edge ||
           m == MaskMode::middle || m == MaskMode::random_subset;
}

struct MaskSpec {
    MaskMode mode = MaskMode::prefix;
    int64_t n = 0;
    int64_t k = 0;       // revealed budget (budget modes only)
    uint64_t seed = 0;   // random mode only
};

inline int64_t num_masked(const Mask& m) {
    int64_t c = 0;
    for (char b : m) c += (b != 0);
    return c;
}

inline std::string mask_to_string(const Mask& m) {
    std::string s(m.size(), '0');
    for (size_t i = 0; i < m.size(); ++i)
        if (m[i]) s[i] = '1';
    return s;
}

inline Mask mask_from_string(std::string_view s) {
    Mask m(s.size(), 0);
    for (size_t i = 0; i < s.size(); ++i) {
        require(s[i] == '0' || s[i] == '1', "mask_from_string: bad character '", s[i],
                "' at index ", i);
        m[i] = (s[i] == '1');
    }
    return m;
}

// The five budget-k geometries.
inline Mask make_mask(const MaskSpec& spec) {
    require(is_budget_mode(spec.mode), "make_mask: mode ", mask_mode_name(spec.mode),
            " is not a budget mode; use its dedicated operation");
    const int64_t n = spec.n, k = spec.k;
    require(n > 0, "make_mask: n must be positive, got ", n);
    require(k > 0 && k < n, "make_mask: budget k=", k, " must satisfy 0 < k < n=", n);
    Mask m(static_cast<size_t>(n), 1);
    auto reveal = [&m](int64_t from, int64_t to) {
        for (int64_t i = from; i < to; ++i) m[static_cast<size_t>(i)] = 0;
    };
    switch (spec.mode) {
        case MaskMode::prefix:
            reveal(0, k);
            break;
        case MaskMode::suffix:
            reveal(n - k, n);
            break;
        case MaskMode::edge:
            // odd budgets: front gets the extra token
            reveal(0, (k + 1) / 2);
            reveal(n - k / 2, n);
            break;
        case MaskMode::middle:
            reveal((n - k) / 2, (n - k) / 2 + k);
            break;
        case MaskMode::random_subset: {
            Rng rng(derive_seed(spec.seed, "mask"));
            for (size_t idx : rng.sample_without_replacement(static_cast<size_t>(n),
                                                             static_cast<size_t>(k))) {
                m[idx] = 0;
            }
            break;
        }
        default:
            break;
    }
    return m;
}

// Hide exactly the entity spans; must agree bit-for-bit with redact().
inline Mask targeted_mask(const Snippet& snippet) {
    require(!snippet.pii_spans.empty(), "targeted_mask: snippet has no PII spans");
    Mask m(snippet.tokens.size(), 0);
    for (const auto& s : snippet.pii_spans) {
        require(s.start >= 0 && s.end <= static_cast<int64_t>(m.size()) && s.start < s.end,
                "targeted_mask: span [", s.start, ",", s.end, ") out of bounds");
        for (int64_t p = s.start; p < s.end; ++p) m[static_cast<size_t>(p)] = 1;
    }
    return m;
}

// Reveal everything before the first entity token, hide the rest.
inline Mask dynamic_prefix_mask(const Snippet& snippet) {
    require(!snippet.pii_spans.empty(), "dynamic_prefix_mask: snippet has no PII spans");
    int64_t first = snippet.pii_spans.front().start;
    for (const auto& s : snippet.pii_spans) first = std::min(first, s.start);
    require(first > 0, "dynamic_prefix_mask: first span starts at position 0, leaving no "
                       "revealed prefix (budget must be > 0)");
    Mask m(snippet.tokens.size(), 1);
    for (int64_t i = 0; i < first; ++i) m[static_cast<size_t>(i)] = 0;
    return m;
}

// Chat attacks over the templated sequence. Delimiters (and BOS/EOS) are
// always revealed: the template is public knowledge.
inline Mask chat_mask(const ChatRecord& record, MaskMode mode) {
    require(mode == MaskMode::prompt_cond || mode == MaskMode::response_cond,
            "chat_mask: mode must be prompt_cond or response_cond, got ",
            mask_mode_name(mode));
    const int64_t p = static_cast<int64_t>(record.prompt.size());
    const int64_t r = static_cast<int64_t>(record.response.size());
    require(record.templated.size() == static_cast<size_t>(p + r + 6),
            "chat_mask: templated sequence of ", record.templated.size(),
            " tokens does not match prompt ", p, " + response ", r, " + 6 delimiters");
    Mask m(record.templated.size(), 0);
    // layout: BOS USER_OPEN prompt[p] USER_CLOSE ASSIST_OPEN response[r] ASSIST_CLOSE EOS
    const int64_t prompt_begin = 2;
    const int64_t response_begin = prompt_begin + p + 2;
    if (mode == MaskMode::prompt_cond) {
        for (int64_t i = 0; i < r; ++i) m[static_cast<size_t>(response_begin + i)] = 1;
    } else {
        for (int64_t i = 0; i < p; ++i) m[static_cast<size_t>(prompt_begin + i)] = 1;
    }
    return m;
}

}  // namespace dlmlab
