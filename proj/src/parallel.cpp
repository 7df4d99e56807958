#include "amber/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace amber {

int max_threads() {
    static const int cached = [] {
        if (const char* env = std::getenv("AMBER_THREADS")) {
            const int n = std::atoi(env);
            if (n > 0) return n;
        }
        return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
    }();
    return cached;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    const auto workers = std::min<std::int64_t>(max_threads(), n);
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::int64_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::int64_t t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace amber
