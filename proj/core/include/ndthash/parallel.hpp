#pragma once

#include <cstddef>
#include <functional>

namespace ndthash {

// Worker-thread cap. Initialized from the NDT_HASH_THREADS environment
// variable on first use (invalid or missing values mean 1).
void set_max_threads(std::size_t n);
std::size_t max_threads();

// Runs fn(begin, end) over disjoint index chunks, on worker threads when the
// cap allows. Chunking depends only on (count, cap), and callers only write
// to per-index state, so results are byte-identical for any thread count.
void parallel_for_rows(std::size_t count,
                       const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace ndthash
