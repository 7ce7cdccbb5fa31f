#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace morphdet {

// Process-wide cap on worker threads. 0 means "all logical cores".
inline std::atomic<unsigned>& thread_limit() {
  static std::atomic<unsigned> limit{0};
  return limit;
}

inline unsigned worker_count() {
  unsigned n = thread_limit().load();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

/// Calls fn(i) for every i in [0, n). Work is handed out dynamically, so fn
/// must write only to slot i of any shared output; the caller reduces in
/// index order afterwards, which keeps results independent of the schedule.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned t = 1; t < workers; ++t) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace morphdet
