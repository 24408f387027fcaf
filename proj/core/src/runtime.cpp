#include "mbflow/runtime.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "mbflow/error.hpp"

namespace mbflow {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

int thread_limit(int requested) {
  int n = std::max(requested, 1);
  if (const char* env = std::getenv("MBFLOW_THREADS"); env && *env) {
    int cap = 0;
    try {
      cap = std::stoi(env);
    } catch (const std::exception&) {
      throw Error(std::string("MBFLOW_THREADS must be a positive integer, got '") + env + "'");
    }
    if (cap < 1) throw Error(std::string("MBFLOW_THREADS must be a positive integer, got '") + env + "'");
    n = std::min(n, cap);
  }
  return n;
}

}  // namespace mbflow
