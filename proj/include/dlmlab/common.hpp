#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dlmlab {

// All recoverable failures surface as dlmlab::error with a message that names
// the failing operation and its operands.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string strcat_all(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    return os.str();
}

template <class... Args>
[[noreturn]] void fail(const Args&... args) {
    throw error(strcat_all(args...));
}

template <class... Args>
void require(bool cond, const Args&... args) {
    if (!cond) {
        fail(args...);
    }
}

// ----------------------------- hashing -----------------------------
// FNV-1a 64-bit, used for config digests and trace state digests.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

// SplitMix64 finalizer; the fixed mixing function behind derived seeds.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Seed derivation: seed' = splitmix64(seed ^ splitmix64(coord)), folded left
// to right. Coordinates may be integers or strings (strings are FNV-hashed).
inline uint64_t derive_seed(uint64_t seed, uint64_t coord) {
    return splitmix64(seed ^ splitmix64(coord));
}

inline uint64_t derive_seed(uint64_t seed, std::string_view coord) {
    return derive_seed(seed, fnv1a64(coord));
}

template <class C0, class C1, class... Rest>
uint64_t derive_seed(uint64_t seed, C0 c0, C1 c1, Rest... rest) {
    return derive_seed(derive_seed(seed, c0), c1, rest...);
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

// ----------------------------- little-endian IO -----------------------------
// Checkpoints and other binary artifacts are written little-endian regardless
// of host order (all supported hosts are little-endian; the byte-wise writers
// keep the format pinned either way).

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(is.good(), "read_u32: unexpected end of stream");
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    require(is.good(), "read_u64: unexpected end of stream");
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline float read_f32(std::istream& is) {
    uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

// ----------------------------- small file helpers -----------------------------
inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open file: ", path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

inline void write_file(const std::string& path, std::string_view contents) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "cannot open file for writing: ", path);
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    require(f.good(), "write failed: ", path);
}

// Deterministic shortest-float formatting for CSV cells.
inline std::string fmt_float(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace dlmlab
