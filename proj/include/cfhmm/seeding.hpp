#pragma once

#include <cstdint>
#include <string_view>

namespace cfhmm {

// splitmix64 finaliser
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t child) noexcept {
    return mix64(mix64(parent) ^ (child + 0x632be59bd9b4e019ULL));
}

// FNV-1a, for string identifiers
constexpr std::uint64_t hash_id(std::string_view id) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : id) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace cfhmm
