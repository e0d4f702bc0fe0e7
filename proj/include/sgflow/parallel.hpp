#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sgflow {

/// Worker count: SGFLOW_THREADS when set and positive, else hardware concurrency.
inline std::size_t thread_count() {
  if (const char* env = std::getenv("SGFLOW_THREADS")) {
    const long requested = std::strtol(env, nullptr, 10);
    if (requested > 0) return static_cast<std::size_t>(requested);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

inline constexpr std::size_t kDefaultBlockSize = 64;

/// Runs `body(begin, end, acc)` over fixed-size blocks of [0, count) and
/// merges the per-block accumulators in block order. Block boundaries do not
/// depend on the thread count, so the result is bit-identical for any
/// SGFLOW_THREADS setting.
template <class Accumulator, class Body>
Accumulator blocked_reduce(std::size_t count, const Accumulator& empty, Body&& body,
                           std::size_t block_size = kDefaultBlockSize) {
  const std::size_t blocks = (count + block_size - 1) / block_size;
  std::vector<Accumulator> partial(blocks, empty);
  const std::size_t workers = std::min(thread_count(), std::max<std::size_t>(blocks, 1));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= blocks) return;
      try {
        const std::size_t begin = b * block_size;
        body(begin, std::min(count, begin + block_size), partial[b]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = blocks;
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  Accumulator total = empty;
  for (auto& part : partial) total.merge(part);
  return total;
}

}  // namespace sgflow
