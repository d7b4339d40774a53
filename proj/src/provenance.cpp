#include "reid/provenance.hpp"

#include <cstdio>

#include "reid/rng.hpp"

namespace reid {

std::string hex_digest(std::string_view text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(text)));
  return buf;
}

std::string provenance_line(std::string_view command, std::string_view config_digest, std::uint64_t seed) {
  std::string out = "# reid ";
  out += kToolVersion;
  out += ' ';
  out += command;
  out += " config=";
  out += config_digest;
  out += " seed=";
  out += std::to_string(seed);
  return out;
}

}  // namespace reid
