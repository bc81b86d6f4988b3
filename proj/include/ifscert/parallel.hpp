#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace ifscert {

/// Worker count for sample- and grid-parallel loops. Results never depend on it.
struct Exec {
  unsigned threads = 1;

  /// IFSCERT_THREADS if set and positive, else 1.
  static Exec from_env() {
    Exec e;
    if (const char* env = std::getenv("IFSCERT_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v > 0) e.threads = static_cast<unsigned>(v);
    }
    return e;
  }
};

/// Runs body(i) for i in [0, n). Work is split into contiguous blocks; the
/// exception from the lowest failing index is rethrown.
template <class Body>
void parallel_for(std::size_t n, const Exec& exec, Body&& body) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(exec.threads, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::size_t> error_index(workers, n);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = n * w / workers;
      const std::size_t end = n * (w + 1) / workers;
      pool.emplace_back([&, w, begin, end] {
        for (std::size_t i = begin; i < end; ++i) {
          try {
            body(i);
          } catch (...) {
            errors[w] = std::current_exception();
            error_index[w] = i;
            return;
          }
        }
      });
    }
  }
  std::size_t best = workers;
  for (std::size_t w = 0; w < workers; ++w)
    if (errors[w] && (best == workers || error_index[w] < error_index[best])) best = w;
  if (best != workers) std::rethrow_exception(errors[best]);
}

/// Pairwise (tree) summation in a fixed order.
inline double pairwise_sum(std::span<const double> values) {
  if (values.empty()) return 0.0;
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace ifscert
