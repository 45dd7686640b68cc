#include "sparseformer/optim.hpp"

#include "sparseformer/errors.hpp"

#include <cmath>
#include <numbers>

namespace sparseformer {

void adamw_step(std::span<double> param, std::span<const double> grad, AdamWState& state, double lr,
                const AdamWConfig& config) {
    if (grad.size() != param.size()) throw DimensionError("adamw_step: gradient length does not match parameter");
    if (state.m.empty()) {
        state.m.assign(param.size(), 0.0);
        state.v.assign(param.size(), 0.0);
    }
    if (state.m.size() != param.size() || state.v.size() != param.size()) {
        throw DimensionError("adamw_step: moment buffers do not match parameter");
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i])) {
            throw NumericError("adamw_step: non-finite gradient at element " + std::to_string(i));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
        double p = param[i] - lr * config.weight_decay * param[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        p -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
        param[i] = round_to_precision(p);
    }
}

AdamW::AdamW(ParameterList params, AdamWConfig config)
    : params_(std::move(params)), config_(config), state_(params_.size()) {}

void AdamW::step(double lr) {
    // Validate everything first so a rejected step changes nothing.
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient in " + p.name);
        }
    }
    std::vector<double> zeros;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k].tensor;
        std::span<const double> g;
        if (p.has_grad()) {
            g = p.grad();
        } else {
            zeros.assign(p.numel(), 0.0);
            g = zeros;
        }
        adamw_step(p.mutable_data(), g, state_[k], lr, config_);
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

double cosine_lr(double t, double total, double peak, double floor) {
    if (total <= 0.0) return peak;
    return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * t / total));
}

bool EarlyStopping::update(std::size_t epoch, double score) {
    improved_ = best_epoch_ == 0 || score > best_;
    if (improved_) {
        best_ = score;
        best_epoch_ = epoch;
        stale_ = 0;
    } else {
        ++stale_;
    }
    return stale_ >= patience_;
}

}  // namespace sparseformer
