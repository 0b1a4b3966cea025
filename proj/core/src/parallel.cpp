#include "ndthash/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace ndthash {

namespace {

std::size_t read_env_threads() {
  const char* env = std::getenv("NDT_HASH_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long value = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || value < 1) return 1;
  return static_cast<std::size_t>(value);
}

std::atomic<std::size_t> g_max_threads{0};  // 0 = not yet initialized

}  // namespace

void set_max_threads(std::size_t n) { g_max_threads.store(n < 1 ? 1 : n); }

std::size_t max_threads() {
  std::size_t n = g_max_threads.load();
  if (n == 0) {
    n = read_env_threads();
    g_max_threads.store(n);
  }
  return n;
}

void parallel_for_rows(std::size_t count,
                       const std::function<void(std::size_t, std::size_t)>& fn) {
  const std::size_t threads =
      std::min({max_threads(), count, std::size_t{256}});
  if (threads <= 1 || count < 64) {
    fn(0, count);
    return;
  }
  const std::size_t chunk = (count + threads - 1) / threads;
  std::vector<std::thread> workers;
  workers.reserve(threads - 1);
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    if (begin >= count) break;
    const std::size_t end = std::min(begin + chunk, count);
    workers.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(0, std::min(chunk, count));
  for (std::thread& w : workers) w.join();
}

}  // namespace ndthash
