#pragma once

// Weighted binary cross-entropy over crack probabilities, with the positive
// class boosted by a balance factor to counter the crack/background pixel
// imbalance.

#include "rhanet/tensor.hpp"

namespace rhanet {

struct LossConfig {
    // Balance factor for the positive (crack) class. A non-positive value
    // means "auto": the negative/positive pixel ratio of the training split,
    // resolved before training starts.
    double omega_p = -1.0;
    double eps_clamp = 1e-7;
};

// −Σ_i (ω_p·y_i·log p_i + (1−y_i)·log(1−p_i)), summed over pixels and then
// averaged over the leading batch axis (rank-1 inputs count as one sample).
// Predictions are clamped to [ε, 1−ε] so the logs stay finite.
template <typename T>
Tensor<T> weighted_bce(const Tensor<T>& pred, const Tensor<T>& target, T omega_p,
                       T eps = T(1e-7)) {
    if (pred.shape() != target.shape())
        throw ShapeError("weighted_bce: prediction " + shape_str(pred.shape()) +
                         " and target " + shape_str(target.shape()) + " shapes differ");
    if (omega_p <= T(0)) throw ValueError("weighted_bce: omega_p must be positive");
    for (T y : target.values())
        if (y != T(0) && y != T(1))
            throw ValueError("weighted_bce: target contains non-binary value " +
                             std::to_string(static_cast<double>(y)));

    const int64_t batch = pred.rank() >= 2 ? pred.dim(0) : 1;
    const T inv_batch = T(1) / static_cast<T>(batch);
    const auto& p = pred.values();
    const auto& y = target.values();
    T acc = T(0);
    for (size_t i = 0; i < p.size(); ++i) {
        const T pc = std::min(std::max(p[i], eps), T(1) - eps);
        acc -= omega_p * y[i] * std::log(pc) + (T(1) - y[i]) * std::log(T(1) - pc);
    }
    acc *= inv_batch;

    auto pn = pred.node();
    auto tn = target.node();
    auto rule = [pn, tn, omega_p, eps, inv_batch](detail::TensorNode<T>& o) {
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        const T g = o.grad[0] * inv_batch;
        for (size_t i = 0; i < pn->values.size(); ++i) {
            const T pv = pn->values[i];
            if (pv <= eps || pv >= T(1) - eps) continue; // clamped flat region
            const T yv = tn->values[i];
            pn->grad[i] += g * (-omega_p * yv / pv + (T(1) - yv) / (T(1) - pv));
        }
    };
    return detail::make_op_result<T>(Shape{1}, std::vector<T>{acc}, {pred, target}, rule,
                                     "weighted_bce");
}

} // namespace rhanet
