#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace bwssl {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset(offset) {}
  std::size_t offset;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Warning counters for epsilon clamps (division underflow, zero norms).
// ---------------------------------------------------------------------------

struct WarningCounters {
  std::atomic<std::uint64_t> division_clamps{0};
  std::atomic<std::uint64_t> zero_norm_clamps{0};
  std::atomic<std::uint64_t> log_clamps{0};

  void reset() {
    division_clamps = 0;
    zero_norm_clamps = 0;
    log_clamps = 0;
  }
};

inline WarningCounters& warnings() {
  static WarningCounters counters;
  return counters;
}

// Epsilon below which a divisor is clamped.
inline constexpr double kDivEpsilon = 1e-12;

// ---------------------------------------------------------------------------
// Seed-derived random streams.
//
// Every stochastic decision draws from a stream identified by (seed, name,
// indices...), so results do not depend on iteration or thread order.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

using Rng = std::mt19937_64;

template <typename... Ix>
Rng make_stream(std::uint64_t seed, std::string_view name, Ix... indices) {
  std::uint64_t h = splitmix64(seed ^ hash_name(name));
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(indices))), ...);
  return Rng(h);
}

// ---------------------------------------------------------------------------
// Worker cap. Parallel loops split [0, n) into contiguous chunks; callers
// must make each index independent so the result is thread-count invariant.
// ---------------------------------------------------------------------------

inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{1};
  return cap;
}

inline void set_threads(int n) { thread_cap() = std::max(1, n); }

inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const auto workers = static_cast<std::size_t>(std::min<int>(thread_cap(), static_cast<int>(n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace bwssl
