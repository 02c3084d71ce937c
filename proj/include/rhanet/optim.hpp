#pragma once

// Adam with bias-corrected moment estimates. Only the learning rate comes
// from the training protocol; the remaining hyperparameters are the standard
// defaults.

#include <cstdint>

#include "rhanet/blocks.hpp"

namespace rhanet {

template <typename T = float>
class Adam {
public:
    struct Config {
        T lr = T(1e-3);
        T beta1 = T(0.9);
        T beta2 = T(0.999);
        T eps = T(1e-8);
    };

    Adam() = default;

    Adam(std::vector<std::pair<std::string, Tensor<T>>> params, Config cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& [name, t] : params_) {
            m_.emplace_back(name + ".adam_m", Tensor<T>(t.shape(), T(0)));
            v_.emplace_back(name + ".adam_v", Tensor<T>(t.shape(), T(0)));
        }
    }

    // One update over every registered parameter. Gradients must have been
    // populated by a backward pass; callers zero them afterwards.
    void step() {
        ++step_;
        const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(step_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(step_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& t = params_[i].second;
            if (t.node()->grad.size() != t.node()->values.size())
                throw ValueError("adam: missing gradient for parameter '" + params_[i].first + "'");
            auto& theta = t.values();
            const auto& g = t.node()->grad;
            auto& m = m_[i].second.values();
            auto& v = v_[i].second.values();
            for (size_t j = 0; j < theta.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * g[j] * g[j];
                const T mhat = m[j] / bc1;
                const T vhat = v[j] / bc2;
                theta[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    uint64_t step_count() const { return step_; }
    void set_step_count(uint64_t s) { step_ = s; }
    const Config& config() const { return cfg_; }

    // Moment buffers interleaved per parameter, for checkpointing.
    std::vector<std::pair<std::string, Tensor<T>>> state_tensors() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.reserve(2 * m_.size());
        for (size_t i = 0; i < m_.size(); ++i) {
            out.push_back(m_[i]);
            out.push_back(v_[i]);
        }
        return out;
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> params_;
    std::vector<std::pair<std::string, Tensor<T>>> m_, v_;
    Config cfg_;
    uint64_t step_ = 0;
};

} // namespace rhanet
