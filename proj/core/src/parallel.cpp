#include "vitforge/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vitforge {

namespace {

int initial_thread_count() {
  if (const char* env = std::getenv("VITFORGE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> n{initial_thread_count()};
  return n;
}

}  // namespace

int thread_count() { return thread_setting().load(); }

void set_thread_count(int n) { thread_setting().store(n < 1 ? 1 : n); }

void retain_freed_memory() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

void parallel_for(std::size_t chunks, const std::function<void(std::size_t)>& body) {
  const int threads = thread_count();
  if (threads <= 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) body(c);
    return;
  }
#ifdef VITFORGE_HAVE_OPENMP
  const auto n = static_cast<long long>(chunks);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long long c = 0; c < n; ++c) body(static_cast<std::size_t>(c));
#else
  for (std::size_t c = 0; c < chunks; ++c) body(c);
#endif
}

}  // namespace vitforge
