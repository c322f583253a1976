#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "evtrk/layers.hpp"
#include "evtrk/logging.hpp"

namespace evtrk {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
            throw std::invalid_argument("AdamConfig: betas must lie in (0, 1)");
    }
};

// Bias-corrected Adam update on one flat parameter array.
// Returns false (and leaves everything untouched) when the gradient contains
// non-finite values.
inline bool adam_step(std::span<double> params, std::span<const double> grads,
                      std::span<double> m, std::span<double> v, const AdamConfig& cfg,
                      std::int64_t step_index) {
    cfg.validate();
    if (step_index < 1) throw std::invalid_argument("adam_step: step_index must be >= 1");
    if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size())
        throw std::invalid_argument("adam_step: size mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) return false;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
    for (size_t i = 0; i < params.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
    return true;
}

// Optimizer over a set of named parameters; keeps per-parameter moments.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<ParamRef> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        cfg_.validate();
        for (const ParamRef& p : params_) {
            if (p.trainable) {
                m_.emplace_back(p.value->size(), 0.0);
                v_.emplace_back(p.value->size(), 0.0);
            } else {
                m_.emplace_back();
                v_.emplace_back();
            }
        }
    }

    void zero_grad() {
        for (const ParamRef& p : params_)
            if (p.trainable) p.value->zero_grad();
    }

    // Optional global-norm clipping (<= 0 disables). Returns false if the
    // update was skipped because of non-finite gradients.
    bool step(double clip_global_norm = 0.0) {
        ++t_;
        bool finite = true;
        double sq = 0.0;
        for (const ParamRef& p : params_) {
            if (!p.trainable) continue;
            for (double g : p.value->grad()) {
                if (!std::isfinite(g)) finite = false;
                sq += g * g;
            }
        }
        if (!finite) {
            EVTRK_INFO("adam: skipping step %lld, non-finite gradient",
                       static_cast<long long>(t_));
            return false;
        }
        double scale = 1.0;
        if (clip_global_norm > 0.0) {
            double norm = std::sqrt(sq);
            if (norm > clip_global_norm) scale = clip_global_norm / norm;
        }
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].trainable) continue;
            Tensor4& p = *params_[i].value;
            auto& grad = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            double* data = p.data();
            for (size_t j = 0; j < grad.size(); ++j) {
                double g = grad[j] * scale;
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
                data[j] -= cfg_.learning_rate * (m[j] / bc1) /
                           (std::sqrt(v[j] / bc2) + cfg_.epsilon);
            }
        }
        return true;
    }

    std::int64_t step_count() const { return t_; }
    AdamConfig& config() { return cfg_; }

private:
    std::vector<ParamRef> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace evtrk
