#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace reid {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// 16 hex digits of a 64-bit FNV-1a digest.
std::string hex_digest(std::string_view text);

/// "# reid <version> <command> config=<digest> seed=<seed>"
std::string provenance_line(std::string_view command, std::string_view config_digest, std::uint64_t seed);

}  // namespace reid
