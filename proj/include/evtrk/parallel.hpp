#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace evtrk {

// Static-partition worker pool. Every element of a parallel_for range is
// computed by exactly one thread with an unchanged inner summation order,
// so results are bit-identical for any worker count.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void set_jobs(int jobs) {
        if (jobs < 1) jobs = 1;
        std::unique_lock lk(mu_);
        if (jobs == jobs_) return;
        shutdown_locked();
        jobs_ = jobs;
        for (int i = 1; i < jobs_; ++i)
            workers_.emplace_back([this, i] { worker_loop(i); });
    }

    int jobs() const { return jobs_; }

    // f(begin, end) over a static split of [0, n).
    void for_range(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& f) {
        if (n <= 0) return;
        int parts = jobs_;
        if (parts <= 1 || n < 2) {
            f(0, n);
            return;
        }
        if (parts > n) parts = static_cast<int>(n);
        {
            std::unique_lock lk(mu_);
            task_ = &f;
            task_n_ = n;
            task_parts_ = parts;
            done_count_ = 0;
            ++generation_;
        }
        cv_.notify_all();
        run_part(0);  // main thread takes the first chunk
        std::unique_lock lk(mu_);
        done_cv_.wait(lk, [&] { return done_count_ >= task_parts_ - 1; });
        task_ = nullptr;
    }

    ~ThreadPool() {
        std::unique_lock lk(mu_);
        shutdown_locked();
    }

private:
    ThreadPool() = default;

    void shutdown_locked() {
        stop_ = true;
        ++generation_;
        cv_.notify_all();
        mu_.unlock();
        for (auto& w : workers_) w.join();
        mu_.lock();
        workers_.clear();
        stop_ = false;
    }

    void run_part(int part) {
        std::int64_t chunk = (task_n_ + task_parts_ - 1) / task_parts_;
        std::int64_t b = part * chunk;
        std::int64_t e = std::min<std::int64_t>(task_n_, b + chunk);
        if (b < e) (*task_)(b, e);
    }

    void worker_loop(int index) {
        std::uint64_t seen = 0;
        while (true) {
            std::unique_lock lk(mu_);
            cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
            seen = generation_;
            if (stop_) return;
            if (task_ == nullptr || index >= task_parts_) continue;
            lk.unlock();
            run_part(index);
            lk.lock();
            ++done_count_;
            done_cv_.notify_one();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> workers_;
    int jobs_ = 1;
    bool stop_ = false;
    std::uint64_t generation_ = 0;
    const std::function<void(std::int64_t, std::int64_t)>* task_ = nullptr;
    std::int64_t task_n_ = 0;
    int task_parts_ = 1;
    int done_count_ = 0;
};

inline void set_worker_count(int jobs) { ThreadPool::instance().set_jobs(jobs); }

template <typename F>
inline void parallel_for(std::int64_t n, F&& f) {
    std::function<void(std::int64_t, std::int64_t)> fn = std::forward<F>(f);
    ThreadPool::instance().for_range(n, fn);
}

}  // namespace evtrk
