#pragma once

#include <cstddef>
#include <functional>

namespace vitforge {

/// Thread cap for internal kernels. Reads VITFORGE_THREADS on first use,
/// defaulting to the hardware concurrency.
int thread_count();
void set_thread_count(int n);

/// Keeps large freed blocks in the process heap instead of returning them
/// to the OS, so per-step activation buffers do not page-fault anew on
/// every allocation. No-op outside glibc. Idempotent.
void retain_freed_memory();

/// Runs body(chunk) for chunk in [0, chunks). Work is split into
/// caller-chosen chunks, never thread-dependent ones, so results do not
/// depend on the thread count.
void parallel_for(std::size_t chunks, const std::function<void(std::size_t)>& body);

}  // namespace vitforge
