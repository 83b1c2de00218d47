#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace hoversim
{

/// Number of worker threads used by parallel_for (hardware concurrency, at least 1).
inline unsigned workerCount() {
  return std::max(1u, std::thread::hardware_concurrency());
}

/**
 * @brief Runs fn(i) for i in [0, n) on contiguous chunks across worker threads.
 *
 * Each index is visited exactly once; results must be written to per-index
 * slots. The first exception thrown by any chunk is rethrown on the caller.
 */
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 1) {

  const std::size_t chunks = std::min<std::size_t>(workerCount(), (n + min_chunk - 1) / std::max<std::size_t>(1, min_chunk));

  if (chunks <= 1) {
    for (std::size_t i = 0; i < n; i++) {
      fn(i);
    }
    return;
  }

  std::vector<std::exception_ptr> errors(chunks);
  {
    std::vector<std::jthread> threads;
    threads.reserve(chunks - 1);

    auto run = [&](std::size_t c) {
      const std::size_t begin = n * c / chunks;
      const std::size_t end   = n * (c + 1) / chunks;
      try {
        for (std::size_t i = begin; i < end; i++) {
          fn(i);
        }
      }
      catch (...) {
        errors[c] = std::current_exception();
      }
    };

    for (std::size_t c = 1; c < chunks; c++) {
      threads.emplace_back(run, c);
    }
    run(0);
  }

  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

}  // namespace hoversim
