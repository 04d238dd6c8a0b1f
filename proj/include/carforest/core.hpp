#pragma once

// Shared plumbing: error types, Eigen aliases, deterministic parallel loops,
// quantiles and number formatting.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace carforest {

inline constexpr const char* kVersion = "1.0.0";

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Coordinates = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using IndexList = std::vector<Index>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// Arguments or data that violate a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Factorization or optimizer failure.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Worker count used by parallel_for. Results never depend on it.
void set_thread_count(int n);
int thread_count();

namespace detail {
bool& in_parallel_region();
}

/// Runs fn(i) for i in [0, n). Each index must write only its own output slot,
/// which keeps results independent of scheduling. Nested calls run serially.
/// The exception raised by the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, thread_count()));
  if (n == 0) return;
  if (workers <= 1 || n == 1 || detail::in_parallel_region()) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t error_index = n;
  std::exception_ptr error;
  auto body = [&] {
    detail::in_parallel_region() = true;
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
    detail::in_parallel_region() = false;
  };
  std::vector<std::thread> pool;
  const std::size_t spawn = std::min(workers, n) - 1;
  pool.reserve(spawn);
  for (std::size_t t = 0; t < spawn; ++t) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Empirical quantile, type 7 (linear interpolation between order statistics).
template <typename Derived>
double quantile_type7(const Eigen::DenseBase<Derived>& values, double prob) {
  std::vector<double> sorted(values.derived().data(), values.derived().data() + values.size());
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(sorted.begin(), sorted.end());
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline bool is_missing(double v) { return std::isnan(v); }

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// Mixes a base seed with stream identifiers into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

}  // namespace carforest
