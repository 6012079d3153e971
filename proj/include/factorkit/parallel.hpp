#pragma once

#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace factorkit {

// Fixed pool driving parallel_for over an index range. Work always splits into
// the same index units regardless of thread count, and callers reduce partial
// results in index order, so numeric output never depends on FACTORKIT_THREADS.
// Items are coarse (whole samples / chunks), so per-item locking is cheap
// relative to the work done per item.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int threads() const { return n_threads_; }

    // Runs fn(i) for i in [0, n). Blocks until every item finished. Only one
    // job may be active at a time; nested calls fall back to serial execution.
    void run(int64_t n, const std::function<void(int64_t)>& fn) {
        if (n <= 0) return;
        if (n == 1 || n_threads_ == 1) {
            for (int64_t i = 0; i < n; ++i) fn(i);
            return;
        }
        std::unique_lock<std::mutex> lock(mutex_);
        if (active_) {
            lock.unlock();
            for (int64_t i = 0; i < n; ++i) fn(i);
            return;
        }
        active_ = true;
        job_ = &fn;
        job_size_ = n;
        next_ = 0;
        pending_ = n;
        ++generation_;
        const uint64_t gen = generation_;
        wake_.notify_all();
        work_items(lock, gen);
        done_.wait(lock, [&] { return pending_ == 0; });
        job_ = nullptr;
        active_ = false;
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lock(mutex_);
            stop_ = true;
            wake_.notify_all();
        }
        for (auto& t : workers_) t.join();
    }

private:
    ThreadPool() {
        n_threads_ = detect_threads();
        for (int i = 0; i < n_threads_ - 1; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    static int detect_threads() {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw <= 0) hw = 1;
        if (const char* env = std::getenv("FACTORKIT_THREADS")) {
            const int cap = std::atoi(env);
            if (cap >= 1 && cap < hw) hw = cap;
        }
        return hw;
    }

    // Claims and runs items of generation `gen` until none remain. Caller
    // holds `lock` on entry; it is held again on return.
    void work_items(std::unique_lock<std::mutex>& lock, uint64_t gen) {
        while (generation_ == gen && job_ != nullptr && next_ < job_size_) {
            const int64_t i = next_++;
            const auto* fn = job_;
            lock.unlock();
            (*fn)(i);
            lock.lock();
            if (--pending_ == 0) done_.notify_all();
        }
    }

    void worker_loop() {
        uint64_t seen = 0;
        std::unique_lock<std::mutex> lock(mutex_);
        for (;;) {
            wake_.wait(lock, [&] { return stop_ || (generation_ != seen && job_ != nullptr); });
            if (stop_) return;
            seen = generation_;
            work_items(lock, seen);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable done_;
    const std::function<void(int64_t)>* job_ = nullptr;
    int64_t job_size_ = 0;
    int64_t next_ = 0;
    int64_t pending_ = 0;
    uint64_t generation_ = 0;
    bool active_ = false;
    bool stop_ = false;
    int n_threads_ = 1;
};

inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    ThreadPool::instance().run(n, fn);
}

}  // namespace factorkit
