#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evtrk/parallel.hpp"

namespace evtrk {

// Dense NCHW tensor of 64-bit floats with an optional gradient buffer.
// Gradients accumulate additively; zero_grad() resets them.
class Tensor4 {
public:
    Tensor4() : shape_{0, 0, 0, 0} {}
    Tensor4(int n, int c, int h, int w, double fill = 0.0)
        : shape_{n, c, h, w}, data_(static_cast<size_t>(n) * c * h * w, fill) {
        if (n < 0 || c < 0 || h < 0 || w < 0)
            throw std::invalid_argument("Tensor4: negative dimension");
    }

    static Tensor4 vec(int n, int c, double fill = 0.0) { return Tensor4(n, c, 1, 1, fill); }

    int n() const { return shape_[0]; }
    int c() const { return shape_[1]; }
    int h() const { return shape_[2]; }
    int w() const { return shape_[3]; }
    const std::array<int, 4>& shape() const { return shape_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool same_shape(const Tensor4& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    double& at(int n, int c, int h, int w) {
        assert(n >= 0 && n < shape_[0] && c >= 0 && c < shape_[1]);
        assert(h >= 0 && h < shape_[2] && w >= 0 && w < shape_[3]);
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(int n, int c, int h, int w) const {
        return const_cast<Tensor4*>(this)->at(n, c, h, w);
    }

    double* slice(int n) { return data_.data() + static_cast<size_t>(n) * sample_size(); }
    const double* slice(int n) const {
        return data_.data() + static_cast<size_t>(n) * sample_size();
    }
    size_t sample_size() const {
        return static_cast<size_t>(shape_[1]) * shape_[2] * shape_[3];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    // --- gradient buffer -----------------------------------------------
    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) {
        requires_grad_ = on;
        if (on) grad_.assign(data_.size(), 0.0);
        else grad_.clear();
    }
    std::vector<double>& grad() {
        if (!requires_grad_) throw std::logic_error("Tensor4: gradient not enabled");
        return grad_;
    }
    const std::vector<double>& grad() const {
        if (!requires_grad_) throw std::logic_error("Tensor4: gradient not enabled");
        return grad_;
    }
    void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }
    void accumulate_grad(const Tensor4& g) {
        assert(same_shape(g));
        auto& dst = grad();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += g.data_[i];
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::array<int, 4> shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
    bool requires_grad_ = false;
};

// Seeded RNG wrapper; all stochastic behavior in the toolkit flows
// through one of these so runs are reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive range
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }
    std::uint64_t next() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

    void fill_uniform(Tensor4& t, double lo, double hi) {
        for (double& v : t.flat()) v = uniform(lo, hi);
    }
    void fill_normal(Tensor4& t, double mean, double stddev) {
        for (double& v : t.flat()) v = normal(mean, stddev);
    }

private:
    std::mt19937_64 engine_;
};

// C(M x N) += / = A(M x K) * B(K x N), row-major. The i/k/j order keeps the
// inner loop contiguous in B and C; rows are split across the worker pool.
inline void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c,
                    bool accumulate = false) {
    auto body = [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            double* crow = c + i * n;
            if (!accumulate)
                for (int j = 0; j < n; ++j) crow[j] = 0.0;
            const double* arow = a + i * k;
            for (int kk = 0; kk < k; ++kk) {
                double av = arow[kk];
                if (av == 0.0) continue;
                const double* brow = b + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (static_cast<std::int64_t>(m) * k * n > 65536)
        parallel_for(m, body);
    else
        body(0, m);
}

// C(M x N) += / = A^T(M x K stored K x M) * B(K x N)
inline void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c,
                    bool accumulate = false) {
    auto body = [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            double* crow = c + i * n;
            if (!accumulate)
                for (int j = 0; j < n; ++j) crow[j] = 0.0;
            for (int kk = 0; kk < k; ++kk) {
                double av = a[static_cast<size_t>(kk) * m + i];
                if (av == 0.0) continue;
                const double* brow = b + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (static_cast<std::int64_t>(m) * k * n > 65536)
        parallel_for(m, body);
    else
        body(0, m);
}

// C(M x N) += / = A(M x K) * B^T(K x N stored N x K)
inline void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c,
                    bool accumulate = false) {
    auto body = [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (int j = 0; j < n; ++j) {
                const double* brow = b + static_cast<size_t>(j) * k;
                double acc = 0.0;
                for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
                if (accumulate) crow[j] += acc;
                else crow[j] = acc;
            }
        }
    };
    if (static_cast<std::int64_t>(m) * k * n > 65536)
        parallel_for(m, body);
    else
        body(0, m);
}

}  // namespace evtrk
