#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace trialdigest {

// FNV-1a, 64-bit. Used for cache keys and run fingerprints; stable across
// platforms and runs, not collision-resistant against adversaries.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::string content_hash(std::string_view data) {
    return hex64(fnv1a64(data));
}

} // namespace trialdigest
