#include "nerfrm/common.hpp"

#include <algorithm>

namespace nerfrm {

ThreadPool::ThreadPool() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  set_threads(std::max(1, hw));
}

ThreadPool::~ThreadPool() {
  {
    std::unique_lock<std::mutex> lk(mu_);
    stop_ = true;
  }
  cv_job_.notify_all();
  for (auto& w : workers_) w.join();
}

void ThreadPool::set_threads(int n) {
  n = std::max(1, n);
  {
    std::unique_lock<std::mutex> lk(mu_);
    stop_ = true;
  }
  cv_job_.notify_all();
  for (auto& w : workers_) w.join();
  workers_.clear();
  stop_ = false;
  // main thread participates, so spawn n-1 workers
  for (int i = 0; i < n - 1; ++i) workers_.emplace_back([this] { worker_loop(); });
}

void ThreadPool::worker_loop() {
  uint64_t seen_epoch = 0;
  for (;;) {
    const std::function<void(int64_t, int64_t)>* job = nullptr;
    int64_t n = 0, chunk = 0;
    {
      std::unique_lock<std::mutex> lk(mu_);
      cv_job_.wait(lk, [&] { return stop_ || (job_ != nullptr && epoch_ != seen_epoch); });
      if (stop_) return;
      seen_epoch = epoch_;
      job = job_;
      n = job_n_;
      chunk = job_chunk_;
      ++workers_in_job_;
    }
    for (;;) {
      int64_t ci = next_chunk_.fetch_add(1);
      if (ci >= chunks_total_) break;
      int64_t lo = ci * chunk;
      int64_t hi = std::min<int64_t>(n, lo + chunk);
      (*job)(lo, hi);
      chunks_done_.fetch_add(1);
    }
    {
      std::unique_lock<std::mutex> lk(mu_);
      --workers_in_job_;
    }
    cv_done_.notify_all();
  }
}

void ThreadPool::parallel_for(int64_t n, int64_t chunk_size,
                              const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  chunk_size = std::max<int64_t>(1, chunk_size);
  int64_t nchunks = (n + chunk_size - 1) / chunk_size;
  if (workers_.empty() || nchunks == 1) {
    for (int64_t ci = 0; ci < nchunks; ++ci) {
      int64_t lo = ci * chunk_size;
      fn(lo, std::min<int64_t>(n, lo + chunk_size));
    }
    return;
  }
  {
    std::unique_lock<std::mutex> lk(mu_);
    job_ = &fn;
    job_n_ = n;
    job_chunk_ = chunk_size;
    chunks_total_ = nchunks;
    next_chunk_.store(0);
    chunks_done_.store(0);
    ++epoch_;
  }
  cv_job_.notify_all();
  // main thread pulls chunks too
  for (;;) {
    int64_t ci = next_chunk_.fetch_add(1);
    if (ci >= nchunks) break;
    int64_t lo = ci * chunk_size;
    int64_t hi = std::min<int64_t>(n, lo + chunk_size);
    fn(lo, hi);
    chunks_done_.fetch_add(1);
  }
  {
    // the job (and the caller's fn) may be torn down only after every chunk
    // has run and every worker that accepted this epoch has left the loop
    std::unique_lock<std::mutex> lk(mu_);
    cv_done_.wait(lk, [&] {
      return chunks_done_.load() == chunks_total_ && workers_in_job_ == 0;
    });
    job_ = nullptr;
  }
}

}  // namespace nerfrm
