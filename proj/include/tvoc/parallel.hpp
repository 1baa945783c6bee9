#pragma once

#include <cstddef>
#include <functional>

namespace tvoc {

/// Worker cap for data-parallel loops. Defaults to TVOC_THREADS or hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs fn(i) for i in [0, n). Each index must write only to its own output slot,
/// which keeps results identical for any worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tvoc
