#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dlmlab/common.hpp"

namespace dlmlab {

using TokenSeq = std::vector<int>;

// Byte-level vocabulary: ids 0..255 are raw bytes, then the special tokens.
// Ids are dense and fixed; encode() never produces a special id, so MASK can
// only enter a sequence through masking.
constexpr int PAD_ID = 256;
constexpr int BOS_ID = 257;
constexpr int EOS_ID = 258;
constexpr int MASK_ID = 259;
constexpr int USER_OPEN_ID = 260;
constexpr int USER_CLOSE_ID = 261;
constexpr int ASSIST_OPEN_ID = 262;
constexpr int ASSIST_CLOSE_ID = 263;
constexpr int VOCAB_SIZE = 264;

inline bool is_special(int id) { return id >= 256 && id < VOCAB_SIZE; }

inline const char* special_name(int id) {
    switch (id) {
        case PAD_ID: return "[PAD]";
        case BOS_ID: return "[BOS]";
        case EOS_ID: return "[EOS]";
        case MASK_ID: return "[MASK]";
        case USER_OPEN_ID: return "[USER]";
        case USER_CLOSE_ID: return "[/USER]";
        case ASSIST_OPEN_ID: return "[ASSIST]";
        case ASSIST_CLOSE_ID: return "[/ASSIST]";
        default: return nullptr;
    }
}

inline TokenSeq encode(std::string_view text) {
    TokenSeq out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(static_cast<int>(c));
    return out;
}

// Specials decode to printable bracketed placeholders (documented above);
// raw bytes decode to themselves.
inline std::string decode(const TokenSeq& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int id : tokens) {
        require(id >= 0 && id < VOCAB_SIZE, "decode: token id ", id, " out of range [0,",
                VOCAB_SIZE, ")");
        if (id < 256) {
            out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        } else {
            out += special_name(id);
        }
    }
    return out;
}

}  // namespace dlmlab
