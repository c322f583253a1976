#pragma once

#include <chrono>
#include <stdexcept>
#include <vector>

namespace evtrk {

struct RuntimeReport {
    double compute_time_s = 0.0;
    double data_time_s = 0.0;
    double real_time_factor = 0.0;  // compute / data; < 1 is faster than real time
};

inline RuntimeReport make_runtime_report(double compute_time_s, double data_time_s) {
    if (!(compute_time_s > 0.0) || !(data_time_s > 0.0))
        throw std::invalid_argument("runtime report requires positive times");
    return {compute_time_s, data_time_s, compute_time_s / data_time_s};
}

inline RuntimeReport aggregate_runtime(const std::vector<RuntimeReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("no runtime reports");
    RuntimeReport mean;
    for (const RuntimeReport& r : reports) {
        mean.compute_time_s += r.compute_time_s;
        mean.data_time_s += r.data_time_s;
        mean.real_time_factor += r.real_time_factor;
    }
    mean.compute_time_s /= reports.size();
    mean.data_time_s /= reports.size();
    mean.real_time_factor /= reports.size();  // mean of per-sequence factors
    return mean;
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace evtrk
