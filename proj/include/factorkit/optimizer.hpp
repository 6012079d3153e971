#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "factorkit/errors.hpp"
#include "factorkit/models.hpp"
#include "factorkit/tensor.hpp"

namespace factorkit::training {

struct RmspropConfig {
    double lr = 2e-4;
    double gamma = 0.9;  // squared-gradient decay
    double eps = 1e-8;
    double momentum = 0.0;  // nonzero only for the discriminator
};

// Running squared-gradient accumulators (and optional momentum buffers)
// mirroring one network's parameter shapes.
template <typename T>
struct RmspropState {
    std::vector<Tensor<T>> acc;
    std::vector<Tensor<T>> mom;
    int64_t step = 0;

    static RmspropState like(const models::Net<T>& net, bool with_momentum) {
        RmspropState st;
        for (const auto& v : net.values) st.acc.push_back(Tensor<T>::zeros(v.shape));
        if (with_momentum)
            for (const auto& v : net.values) st.mom.push_back(Tensor<T>::zeros(v.shape));
        return st;
    }
};

// p <- p - lr * g / sqrt(acc + eps), acc <- gamma * acc + (1 - gamma) * g^2.
// With momentum m, the scaled step accumulates into a velocity buffer first.
template <typename T>
void rmsprop_update(models::Net<T>& net, RmspropState<T>& state, const RmspropConfig& cfg) {
    if (state.acc.size() != net.values.size())
        throw ContractError("rmsprop: state does not mirror the parameter set");
    const bool use_momentum = cfg.momentum != 0.0;
    if (use_momentum && state.mom.size() != net.values.size())
        throw ContractError("rmsprop: momentum buffers missing");
    for (size_t i = 0; i < net.values.size(); ++i) {
        auto& p = net.values[i];
        const auto& g = net.grads[i];
        auto& acc = state.acc[i];
        if (!g.same_shape(p)) throw ContractError("rmsprop: gradient shape mismatch");
        for (int64_t k = 0; k < p.numel(); ++k) {
            const T gk = g[k];
            if (!std::isfinite(static_cast<double>(gk)))
                throw NumericError("rmsprop: non-finite gradient in " + net.names[i]);
            acc[k] = static_cast<T>(cfg.gamma) * acc[k] +
                     static_cast<T>(1.0 - cfg.gamma) * gk * gk;
            const T scaled =
                static_cast<T>(cfg.lr) * gk /
                std::sqrt(acc[k] + static_cast<T>(cfg.eps));
            if (use_momentum) {
                auto& buf = state.mom[i][k];
                buf = static_cast<T>(cfg.momentum) * buf + scaled;
                p[k] -= buf;
            } else {
                p[k] -= scaled;
            }
        }
    }
    ++state.step;
}

}  // namespace factorkit::training
