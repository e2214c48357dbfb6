#include "adrl/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace adrl {

namespace {

int env_threads() {
  const char* s = std::getenv("ADRL_THREADS");
  if (s == nullptr || *s == '\0') {
    return 0;
  }
  try {
    return std::max(std::stoi(s), 0);
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

int worker_count(int requested) {
  const int cap = env_threads();
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (cap > 0) {
    n = requested > 0 ? std::min(n, cap) : cap;
  }
  return std::max(n, 1);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) {
            error = std::current_exception();
          }
        }
      }
    });
  }
  for (std::thread& t : threads) {
    t.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
}

}  // namespace adrl
