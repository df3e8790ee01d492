#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tdy/tensor.hpp"

namespace tdy::testutil {

inline TensorPtr random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0,
                               double hi = 1.0, bool requires_grad = false) {
    auto t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t->data) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

/// Random values kept away from zero so relu kinks do not poison
/// finite-difference checks.
inline TensorPtr random_tensor_off_kink(std::vector<std::int64_t> shape, Rng& rng,
                                        bool requires_grad = false) {
    auto t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t->data) {
        double u = rng.uniform(-1.0, 1.0);
        while (std::fabs(u) < 0.05) {
            u = rng.uniform(-1.0, 1.0);
        }
        v = u;
    }
    return t;
}

/// Central finite-difference gradient check. `forward` must rebuild the loss
/// from the leaves on every call. Returns the worst relative error over
/// `coords_per_leaf` sampled coordinates of every leaf.
inline double max_grad_rel_error(const std::function<TensorPtr()>& forward,
                                 const std::vector<TensorPtr>& leaves, Rng& rng,
                                 int coords_per_leaf = 20, double h = 1e-5) {
    for (const auto& leaf : leaves) {
        leaf->ensure_grad();
        leaf->zero_grad();
    }
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        auto loss = forward();
        tape.backward(loss);
    }
    double worst = 0.0;
    for (const auto& leaf : leaves) {
        const std::int64_t n = leaf->size();
        for (int c = 0; c < coords_per_leaf; ++c) {
            const std::int64_t i = n == 1 ? 0 : rng.uniform_int(n);
            const double saved = leaf->data[static_cast<std::size_t>(i)];
            leaf->data[static_cast<std::size_t>(i)] = saved + h;
            const double fp = forward()->data[0];
            leaf->data[static_cast<std::size_t>(i)] = saved - h;
            const double fm = forward()->data[0];
            leaf->data[static_cast<std::size_t>(i)] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = leaf->grad[static_cast<std::size_t>(i)];
            const double denom = std::max(std::fabs(numeric), std::fabs(analytic));
            if (denom < 1e-7) {
                continue;
            }
            worst = std::max(worst, std::fabs(numeric - analytic) / denom);
        }
    }
    return worst;
}

} // namespace tdy::testutil
