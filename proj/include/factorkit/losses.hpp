#pragma once

#include <cmath>
#include <string>

#include "factorkit/errors.hpp"
#include "factorkit/tensor.hpp"

namespace factorkit::losses {

// Predictions are clamped to [kProbEps, 1-kProbEps] before any log.
inline constexpr double kProbEps = 1e-7;

// Loss-term weights of the composite objectives:
//   alpha — KL term, beta — classification on the re-encoded reconstruction,
//   rho — classification on the input, delta — adversarial term.
struct Coeffs {
    double alpha = 0.0;
    double beta = 0.0;
    double rho = 0.0;
    double delta = 0.0;
};

// Per-step loss components and the two composite totals.
struct LossReport {
    double rec = 0.0;        // pixel BCE between input and reconstruction
    double kl = 0.0;         // analytic KL to the unit Gaussian prior
    double class_in = 0.0;   // BCE of the encoder's label head on the input
    double class_rec = 0.0;  // BCE of the label head re-applied to the reconstruction
    double gan = 0.0;        // three-term adversarial BCE
    double aux = 0.0;        // BCE of the adversarial probe on the identity code
    double enc_total = 0.0;
    double dec_total = 0.0;

    bool finite() const {
        return std::isfinite(rec) && std::isfinite(kl) && std::isfinite(class_in) &&
               std::isfinite(class_rec) && std::isfinite(gan) && std::isfinite(aux) &&
               std::isfinite(enc_total) && std::isfinite(dec_total);
    }
};

// Mean negated Bernoulli log-likelihood; targets may be soft values in [0,1].
template <typename T>
double bce(const Tensor<T>& target, const Tensor<T>& prediction) {
    if (!target.same_shape(prediction))
        throw ContractError("bce: target shape " + Tensor<T>::shape_str(target.shape) +
                            " != prediction shape " + Tensor<T>::shape_str(prediction.shape));
    if (target.numel() == 0) throw ContractError("bce: empty input");
    double acc = 0.0;
    for (int64_t i = 0; i < target.numel(); ++i) {
        const double a = static_cast<double>(target[i]);
        if (a < 0.0 || a > 1.0)
            throw ContractError("bce: target value " + std::to_string(a) + " outside [0,1]");
        const double p =
            std::min(std::max(static_cast<double>(prediction[i]), kProbEps), 1.0 - kProbEps);
        acc += a * std::log(p) + (1.0 - a) * std::log(1.0 - p);
    }
    return -acc / static_cast<double>(target.numel());
}

template <typename T>
double kl_divergence(const Tensor<T>& mu, const Tensor<T>& log_var) {
    if (!mu.same_shape(log_var) || mu.ndim() != 2)
        throw ContractError("kl_divergence: expects matching (B,D) mean and log-variance");
    if (!mu.all_finite() || !log_var.all_finite())
        throw NumericError("kl_divergence: non-finite input");
    double acc = 0.0;
    for (int64_t i = 0; i < mu.numel(); ++i) {
        const double m = static_cast<double>(mu[i]);
        const double lv = static_cast<double>(log_var[i]);
        acc += 0.5 * (m * m + std::exp(lv) - lv - 1.0);
    }
    const double out = acc / static_cast<double>(mu.dim(0));
    if (!std::isfinite(out)) throw NumericError("kl_divergence: non-finite result");
    return out;
}

// Equal-weighted three-term adversarial loss: real scored against ones,
// reconstruction and prior decodes against zeros.
template <typename T>
double gan_loss(const Tensor<T>& c_real, const Tensor<T>& c_rec, const Tensor<T>& c_prior) {
    if (!c_real.same_shape(c_rec) || !c_real.same_shape(c_prior))
        throw ContractError("gan_loss: batch size mismatch across discriminator outputs");
    const auto ones = Tensor<T>::full(c_real.shape, T(1));
    const auto zeros = Tensor<T>::zeros(c_real.shape);
    return (bce(ones, c_real) + bce(zeros, c_rec) + bce(zeros, c_prior)) / 3.0;
}

template <typename T>
double reconstruction_loss(const Tensor<T>& x, const Tensor<T>& x_hat) {
    if (!x.same_shape(x_hat)) throw ContractError("reconstruction_loss: shape mismatch");
    return bce(x, x_hat);
}

inline void require_nonnegative(const Coeffs& c) {
    if (!(c.alpha >= 0.0) || !(c.beta >= 0.0) || !(c.rho >= 0.0) || !(c.delta >= 0.0) ||
        !std::isfinite(c.alpha) || !std::isfinite(c.beta) || !std::isfinite(c.rho) ||
        !std::isfinite(c.delta))
        throw ConfigError("loss coefficients must be finite and >= 0");
}

inline double decoder_loss(double rec, double class_rec, double gan, const Coeffs& c) {
    require_nonnegative(c);
    return rec + c.beta * class_rec - c.delta * gan;
}

// include_aux toggles the adversarial identity-code term (off in naive mode);
// include_gan mirrors the optional adversarial term in the encoder objective.
inline double encoder_loss(double rec, double kl, double class_rec, double class_in, double gan,
                           double aux, const Coeffs& c, bool include_aux = true,
                           bool include_gan = true) {
    require_nonnegative(c);
    double total = rec + c.alpha * kl + c.beta * class_rec + c.rho * class_in;
    if (include_gan) total -= c.delta * gan;
    if (include_aux) total -= aux;
    return total;
}

}  // namespace factorkit::losses
