#pragma once

// Minimal fork-join helper. Workers receive disjoint index ranges, so any
// loop body that writes only to its own indices is deterministic regardless
// of the thread count.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace raymar {

inline int& max_threads() {
  static int n = int(std::max(1u, std::thread::hardware_concurrency()));
  return n;
}

inline void set_max_threads(int n) { max_threads() = std::max(1, n); }

// Calls body(begin, end) on contiguous chunks of [0, n).
template <typename Body>
void parallel_for_chunks(std::int64_t n, const Body& body) {
  if (n <= 0) return;
  int nt = std::min<std::int64_t>(max_threads(), n);
  if (nt <= 1) {
    body(std::int64_t(0), n);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(nt);
  std::exception_ptr error;
  std::atomic_flag error_set = ATOMIC_FLAG_INIT;
  std::int64_t chunk = (n + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    std::int64_t b = t * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    workers.emplace_back([&body, &error, &error_set, b, e] {
      try {
        body(b, e);
      } catch (...) {
        if (!error_set.test_and_set()) error = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

// Per-index convenience wrapper.
template <typename Body>
void parallel_for(std::int64_t n, const Body& body) {
  parallel_for_chunks(n, [&body](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) body(i);
  });
}

// splitmix64; used to derive independent per-item RNG seeds.
inline std::uint64_t hash_seed(std::uint64_t seed, std::uint64_t item) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (item + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace raymar
