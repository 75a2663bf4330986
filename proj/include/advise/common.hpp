#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace advise {

// ---------------------------------------------------------------------------
// Errors. The CLI maps each family onto a stable exit code.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, invariant violations, inconsistent shapes.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The numerical core could not produce a result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Samples with (near) zero spread; density estimation is undefined.
class DegenerateSamples : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// The model runner subprocess failed or answered outside the protocol.
class RunnerError : public Error {
 public:
  using Error::Error;
};

class RunnerTimeout : public RunnerError {
 public:
  using RunnerError::RunnerError;
};

// ---------------------------------------------------------------------------
// Dense arrays
// ---------------------------------------------------------------------------

/// Rank-3 float tensor stored [U][V][K], K fastest.
struct Tensor3 {
  std::size_t rows = 0;   // U
  std::size_t cols = 0;   // V
  std::size_t units = 0;  // K
  std::vector<float> data;

  Tensor3() = default;
  Tensor3(std::size_t u, std::size_t v, std::size_t k, float fill = 0.0f)
      : rows(u), cols(v), units(k), data(u * v * k, fill) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  float& at(std::size_t u, std::size_t v, std::size_t k) {
    return data[(u * cols + v) * units + k];
  }
  float at(std::size_t u, std::size_t v, std::size_t k) const {
    return data[(u * cols + v) * units + k];
  }

  /// Row-major [U,V] copy of unit k.
  std::vector<double> unit_slice(std::size_t k) const {
    std::vector<double> out(rows * cols);
    for (std::size_t p = 0; p < rows * cols; ++p) out[p] = data[p * units + k];
    return out;
  }

  bool operator==(const Tensor3&) const = default;
};

/// Rank-2 real array, row-major.
struct Map2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Map2() = default;
  Map2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  std::size_t size() const { return data.size(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool operator==(const Map2&) const = default;
};

/// Interleaved RGB image with channel values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // (y * width + x) * 3 + c

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w * 3, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

// ---------------------------------------------------------------------------
// Small utilities
// ---------------------------------------------------------------------------

/// Fixed 9-significant-digit rendering used by every text artifact.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// Rounds to 9 significant digits so JSON dumps are stable and compact.
inline double round_sig9(double v) {
  if (!std::isfinite(v)) return v;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

/// 64-bit FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Counter-based generator: draw i of stream `key` is a pure function of (key, i).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t at(std::uint64_t counter) const {
    return splitmix64(splitmix64(key_) ^ (counter * 0xd1b54a32d192ed03ull));
  }
  std::uint64_t next() { return at(counter_++); }
  /// Uniform integer in [0, bound) by rejection, no modulo bias.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t r;
    do {
      r = next();
    } while (r >= limit);
    return r % bound;
  }
  CounterRng split(std::uint64_t stream) const { return CounterRng(splitmix64(key_ + stream * 0x9e3779b97f4a7c15ull)); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

/// Runs fn(i) for i in [0,n) on up to `threads` workers. The first exception
/// (lowest index) is rethrown after all workers join.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace advise
