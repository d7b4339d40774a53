#include "reid/parallel.hpp"

#include <cstdlib>
#include <string>

namespace reid {

std::size_t worker_count() {
  if (const char* env = std::getenv("REID_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

}  // namespace reid
