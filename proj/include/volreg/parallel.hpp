#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

// Deterministic data-parallel helpers. Work is split into fixed-size blocks;
// reduction results are stored per block and combined in block order, so
// sums are identical for every worker count.

namespace volreg::par {

inline constexpr std::size_t kBlockSize = 8192;

namespace detail {

inline int resolve_thread_count() {
    if (const char* env = std::getenv("VOLREG_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

inline int& thread_count_ref() {
    static int count = resolve_thread_count();
    return count;
}

// Shared worker pool. One parallel region runs at a time; concurrent
// submissions from independent jobs are serialized on run_mutex_.
class Pool {
public:
    static Pool& instance() {
        static Pool pool;
        return pool;
    }

    void run(int workers, std::size_t blocks, const std::function<void(std::size_t)>& body) {
        std::lock_guard<std::mutex> run_lock(run_mutex_);
        ensure_workers(workers - 1);
        {
            std::lock_guard<std::mutex> lk(mtx_);
            body_ = &body;
            next_block_.store(0, std::memory_order_relaxed);
            total_blocks_ = blocks;
            pending_ = std::min<std::size_t>(static_cast<std::size_t>(workers - 1), blocks);
            ++generation_;
        }
        cv_.notify_all();
        work(body, blocks);
        std::unique_lock<std::mutex> lk(mtx_);
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        body_ = nullptr;
    }

private:
    Pool() = default;
    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(mtx_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void ensure_workers(int n) {
        std::lock_guard<std::mutex> lk(mtx_);
        while (static_cast<int>(threads_.size()) < n) {
            threads_.emplace_back([this] { worker_loop(); });
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::size_t)>* body = nullptr;
            {
                std::unique_lock<std::mutex> lk(mtx_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                seen = generation_;
                if (stop_) return;
                if (body_ == nullptr || pending_ == 0) continue;
                body = body_;
            }
            work(*body, total_blocks_);
            {
                std::lock_guard<std::mutex> lk(mtx_);
                if (pending_ > 0 && --pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    void work(const std::function<void(std::size_t)>& body, std::size_t blocks) {
        for (;;) {
            std::size_t b = next_block_.fetch_add(1, std::memory_order_relaxed);
            if (b >= blocks) break;
            body(b);
        }
    }

    std::mutex run_mutex_;
    std::mutex mtx_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::vector<std::thread> threads_;
    const std::function<void(std::size_t)>* body_ = nullptr;
    std::atomic<std::size_t> next_block_{0};
    std::size_t total_blocks_ = 0;
    std::size_t pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

} // namespace detail

inline int thread_count() { return detail::thread_count_ref(); }

/// Override the worker count (tests use this to compare reductions
/// across thread counts). Values < 1 reset to the environment default.
inline void set_thread_count(int n) {
    detail::thread_count_ref() = n >= 1 ? n : detail::resolve_thread_count();
}

inline std::size_t block_count(std::size_t n) {
    return (n + kBlockSize - 1) / kBlockSize;
}

/// Runs fn(begin, end) over [0, n) in blocks of kBlockSize.
template <typename Fn>
void for_blocks(std::size_t n, Fn&& fn) {
    if (n == 0) return;
    const std::size_t blocks = block_count(n);
    const int workers = thread_count();
    if (workers <= 1 || blocks <= 1) {
        for (std::size_t b = 0; b < blocks; ++b) {
            fn(b * kBlockSize, std::min(n, (b + 1) * kBlockSize));
        }
        return;
    }
    std::function<void(std::size_t)> body = [&](std::size_t b) {
        fn(b * kBlockSize, std::min(n, (b + 1) * kBlockSize));
    };
    detail::Pool::instance().run(workers, blocks, body);
}

/// Deterministic reduction: fn(begin, end, acc) accumulates nacc values per
/// block; the per-block partials are summed in block order.
template <typename Fn>
std::vector<double> reduce_blocks(std::size_t n, std::size_t nacc, Fn&& fn) {
    const std::size_t blocks = block_count(n);
    std::vector<double> partials(blocks * nacc, 0.0);
    for_blocks(n, [&](std::size_t begin, std::size_t end) {
        double* acc = partials.data() + (begin / kBlockSize) * nacc;
        fn(begin, end, acc);
    });
    std::vector<double> out(nacc, 0.0);
    for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t k = 0; k < nacc; ++k) out[k] += partials[b * nacc + k];
    }
    return out;
}

} // namespace volreg::par
