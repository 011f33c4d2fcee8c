#pragma once

#include <cstdint>
#include <string_view>

namespace rvec {

/// 64-bit FNV-1a; stable across platforms, used for artifact digests and
/// per-instance seeds.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rvec
