#include "levyctpe/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace levyctpe {

int max_threads() {
  static const int n = [] {
    if (const char* env = std::getenv("LEVY_CTPE_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return n;
}

namespace {

thread_local bool inside_pool = false;

// Persistent pool; workers sleep between batches.
class Pool {
 public:
  static Pool& instance() {
    static Pool p(max_threads() - 1);
    return p;
  }

  void run(Index n, const std::function<void(Index)>& fn) {
    std::unique_lock<std::mutex> run_lock(run_mutex_);
    fn_ = &fn;
    next_.store(0, std::memory_order_relaxed);
    total_ = n;
    error_ = nullptr;
    {
      std::lock_guard<std::mutex> lk(mutex_);
      pending_ = static_cast<int>(workers_.size());
      ++generation_;
    }
    cv_.notify_all();
    inside_pool = true;
    work();  // calling thread participates
    inside_pool = false;
    {
      std::unique_lock<std::mutex> lk(mutex_);
      done_cv_.wait(lk, [this] { return pending_ == 0; });
    }
    fn_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  explicit Pool(int extra_workers) {
    for (int i = 0; i < extra_workers; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void worker_loop() {
    inside_pool = true;
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(mutex_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      work();
      {
        std::lock_guard<std::mutex> lk(mutex_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  void work() {
    const auto* fn = fn_;
    if (!fn) return;
    for (;;) {
      Index i = next_.fetch_add(1, std::memory_order_relaxed);
      if (i >= total_) break;
      try {
        (*fn)(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mutex_);
        if (!error_) error_ = std::current_exception();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex run_mutex_;
  std::mutex mutex_;
  std::condition_variable cv_, done_cv_;
  std::uint64_t generation_ = 0;
  int pending_ = 0;
  bool stop_ = false;
  const std::function<void(Index)>* fn_ = nullptr;
  std::atomic<Index> next_{0};
  Index total_ = 0;
  std::exception_ptr error_;
};

}  // namespace

void parallel_for(Index n, const std::function<void(Index)>& fn) {
  if (n <= 0) return;
  if (max_threads() == 1 || n == 1 || inside_pool) {
    for (Index i = 0; i < n; ++i) fn(i);  // nested calls run inline
    return;
  }
  Pool::instance().run(n, fn);
}

}  // namespace levyctpe
