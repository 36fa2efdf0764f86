#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace nerfrm {

// Contract failure: throws with location info. Used for all precondition checks.
[[noreturn]] inline void contract_fail(const char* file, int line, const std::string& msg) {
  std::ostringstream os;
  os << "contract violation at " << file << ":" << line << ": " << msg;
  throw std::runtime_error(os.str());
}

#define NERFRM_CHECK(cond, msg)                                     \
  do {                                                              \
    if (!(cond)) {                                                  \
      std::ostringstream os_;                                       \
      os_ << msg;                                                   \
      ::nerfrm::contract_fail(__FILE__, __LINE__, os_.str());       \
    }                                                               \
  } while (0)

// rng stream tags
enum : uint64_t { kRngStratified = 1, kRngBatch = 2, kRngInit = 3, kRngSynthetic = 4 };

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic, platform-independent RNG. Streams are derived by hashing a
// key tuple so that per-ray / per-frame streams are stable under any
// parallel schedule.
struct Rng {
  uint64_t state = 0x853c49e6748fea9bULL;

  Rng() = default;
  explicit Rng(uint64_t seed) : state(seed ^ 0x2545f4914f6cdd1dULL) {
    // burn-in so nearby seeds decorrelate
    splitmix64(state);
    splitmix64(state);
  }

  static Rng keyed(uint64_t seed, uint64_t tag, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0,
                   uint64_t d = 0) {
    uint64_t s = seed;
    splitmix64(s);
    s ^= 0x9e3779b97f4a7c15ULL * (tag + 1);
    splitmix64(s);
    s ^= 0xc2b2ae3d27d4eb4fULL * (a + 1);
    splitmix64(s);
    s ^= 0x165667b19e3779f9ULL * (b + 1);
    splitmix64(s);
    s ^= 0x27d4eb2f165667c5ULL * (c + 1);
    splitmix64(s);
    s ^= 0xd6e8feb86659fd93ULL * (d + 1);
    splitmix64(s);
    return Rng(s);
  }

  uint64_t next_u64() { return splitmix64(state); }

  // uniform in [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    NERFRM_CHECK(n > 0, "uniform_int needs n > 0");
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }
};

// Minimal fork-join pool. Work is split into fixed-size chunks whose
// boundaries do not depend on the worker count, and every output element is
// produced by exactly one chunk, so results are bit-identical regardless of
// scheduling. Reductions must be done by the caller over per-chunk partials.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  void set_threads(int n);
  int threads() const { return static_cast<int>(workers_.size()) + 1; }

  // fn(lo, hi) over [0, n) in chunks of chunk_size
  void parallel_for(int64_t n, int64_t chunk_size, const std::function<void(int64_t, int64_t)>& fn);

  ~ThreadPool();

 private:
  ThreadPool();
  void worker_loop();

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_job_, cv_done_;
  const std::function<void(int64_t, int64_t)>* job_ = nullptr;
  int64_t job_n_ = 0, job_chunk_ = 0;
  std::atomic<int64_t> next_chunk_{0};
  std::atomic<int64_t> chunks_done_{0};
  int64_t chunks_total_ = 0;
  int64_t workers_in_job_ = 0;
  uint64_t epoch_ = 0;
  bool stop_ = false;
};

inline void parallel_for(int64_t n, int64_t chunk_size, const std::function<void(int64_t, int64_t)>& fn) {
  ThreadPool::instance().parallel_for(n, chunk_size, fn);
}

}  // namespace nerfrm
