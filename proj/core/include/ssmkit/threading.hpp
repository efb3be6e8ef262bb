#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace ssmkit {

// Runs fn(task_index) for task_index in [0, ntasks) on `workers` threads.
// Tasks are assigned statically (round-robin) so the partition is a pure
// function of (ntasks, workers); results must be written to disjoint slots by
// the caller, which keeps every run bitwise deterministic regardless of
// scheduling.
template <typename Fn>
void parallel_for(std::size_t ntasks, int workers, Fn&& fn) {
  if (workers <= 1 || ntasks <= 1) {
    for (std::size_t i = 0; i < ntasks; ++i) fn(i);
    return;
  }
  const std::size_t w = std::min<std::size_t>(workers, ntasks);
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&, t]() {
      for (std::size_t i = t; i < ntasks; i += w) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace ssmkit
