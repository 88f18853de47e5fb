#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace prospect {

// Persistent worker pool with static index partitions and per-worker scratch
// arenas. Partitions depend only on (n, worker count) and arenas are reused
// across calls, so heavy kernels stay byte-reproducible and allocation-free
// after warmup.
class WorkerPool {
 public:
  static WorkerPool& instance() {
    static WorkerPool pool;
    return pool;
  }

  int workers() const { return static_cast<int>(threads_.size()); }

  // Runs fn(i, worker) for i in [0, n); worker w takes the contiguous range
  // [n*w/W, n*(w+1)/W). Blocks until every index is done.
  void run(int n, const std::function<void(int, int)>& fn) {
    if (n <= 0) return;
    const int w = workers();
    if (w <= 1 || n == 1) {
      for (int i = 0; i < n; ++i) fn(i, 0);
      return;
    }
    {
      std::unique_lock<std::mutex> lock(mu_);
      job_ = &fn;
      job_n_ = n;
      pending_ = w;
      ++epoch_;
    }
    cv_start_.notify_all();
    std::unique_lock<std::mutex> lock(mu_);
    cv_done_.wait(lock, [&] { return pending_ == 0; });
    job_ = nullptr;
  }

  // Reusable per-worker buffer; `slot` distinguishes concurrent buffers inside
  // one kernel. Grows monotonically.
  template <typename S>
  S* scratch(int worker, int slot, std::size_t count) {
    auto& buf = arenas_[static_cast<std::size_t>(worker)][static_cast<std::size_t>(slot)];
    const std::size_t bytes = count * sizeof(S);
    if (buf.size() < bytes) buf.resize(bytes);
    return reinterpret_cast<S*>(buf.data());
  }

  ~WorkerPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stop_ = true;
      ++epoch_;
    }
    cv_start_.notify_all();
    for (auto& t : threads_) t.join();
  }

 private:
  WorkerPool() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    arenas_.resize(static_cast<std::size_t>(hw), std::vector<std::vector<char>>(4));
    for (auto& a : arenas_) a.resize(4);
    threads_.reserve(static_cast<std::size_t>(hw));
    for (int w = 0; w < hw; ++w)
      threads_.emplace_back([this, w, hw] { worker_loop(w, hw); });
  }

  void worker_loop(int w, int total) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(int, int)>* job = nullptr;
      int n = 0;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_start_.wait(lock, [&] { return epoch_ != seen; });
        seen = epoch_;
        if (stop_) return;
        job = job_;
        n = job_n_;
      }
      const int lo = static_cast<int>(static_cast<long long>(n) * w / total);
      const int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / total);
      for (int i = lo; i < hi; ++i) (*job)(i, w);
      {
        std::unique_lock<std::mutex> lock(mu_);
        if (--pending_ == 0) cv_done_.notify_all();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::vector<std::vector<std::vector<char>>> arenas_;
  std::mutex mu_;
  std::condition_variable cv_start_;
  std::condition_variable cv_done_;
  const std::function<void(int, int)>* job_ = nullptr;
  int job_n_ = 0;
  int pending_ = 0;
  std::uint64_t epoch_ = 0;
  bool stop_ = false;
};

template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  const std::function<void(int, int)> job = fn;
  WorkerPool::instance().run(n, job);
}

inline int worker_count(int n) {
  if (n <= 0) return 1;
  return std::min(n, WorkerPool::instance().workers());
}

}  // namespace prospect
