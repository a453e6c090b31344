#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <future>
#include <vector>

namespace neuform {

/// Calls fn(i) for i in [0, n) on up to `jobs` threads. Work is handed out in
/// index order; the first exception thrown by any call is rethrown.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  if (jobs <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  std::vector<std::future<void>> pending;
  pending.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pending.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    }));
  std::exception_ptr first;
  for (auto& f : pending) {
    try {
      f.get();
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace neuform
