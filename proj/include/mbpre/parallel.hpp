#ifndef MBPRE_PARALLEL_HPP
#define MBPRE_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <type_traits>
#include <vector>

namespace mbpre {

/// Worker count to use when the caller passes 0.
inline std::size_t default_workers() { return std::max<std::size_t>(1, std::thread::hardware_concurrency()); }

/// Calls fn(i) for i in [0, count) on `workers` threads and returns the
/// results ordered by i. Results depend only on fn, never on scheduling, as
/// long as fn(i) derives its randomness from i alone.
template <class Fn>
auto run_replicates(std::size_t count, std::size_t workers, Fn&& fn) {
  using Result = std::invoke_result_t<Fn&, std::size_t>;
  std::vector<Result> out(count);
  if (workers == 0) workers = default_workers();
  workers = std::min(workers, std::max<std::size_t>(count, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  constexpr std::size_t kChunk = 64;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    try {
      for (;;) {
        const std::size_t begin = next.fetch_add(kChunk);
        if (begin >= count) return;
        const std::size_t end = std::min(count, begin + kChunk);
        for (std::size_t i = begin; i < end; ++i) out[i] = fn(i);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next.store(count);
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

/// Calls fn(begin, end) over disjoint chunks covering [0, count).
template <class Fn>
void parallel_for_chunks(std::size_t count, std::size_t workers, std::size_t chunk, Fn&& fn) {
  if (workers == 0) workers = default_workers();
  if (chunk == 0) chunk = 1;
  const std::size_t chunks = (count + chunk - 1) / chunk;
  workers = std::min(workers, std::max<std::size_t>(chunks, 1));
  if (workers <= 1) {
    if (count > 0) fn(std::size_t{0}, count);
    return;
  }
  run_replicates(chunks, workers, [&](std::size_t c) {
    fn(c * chunk, std::min(count, (c + 1) * chunk));
    return 0;
  });
}

}  // namespace mbpre

#endif  // MBPRE_PARALLEL_HPP
