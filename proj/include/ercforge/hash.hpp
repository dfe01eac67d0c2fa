// Stable non-cryptographic digests used for prompt caching and manifest
// dataset digests. FNV-1a is fixed by definition, so digests are portable
// across platforms and toolchains.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ercforge {

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= static_cast<std::uint64_t>(c);
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

inline std::string digest(std::string_view bytes) {
    return hex64(fnv1a64(bytes));
}

}  // namespace ercforge
