#pragma once

#include "sparseformer/grad_check.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace sparseformer {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

struct AdamWState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t step = 0;
};

/// One AdamW update on a flat parameter. Weight decay is decoupled:
/// p <- p - lr*wd*p, then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// Throws NumericError (leaving everything untouched) on a non-finite gradient.
void adamw_step(std::span<double> param, std::span<const double> grad, AdamWState& state, double lr,
                const AdamWConfig& config);

class AdamW {
  public:
    AdamW(ParameterList params, AdamWConfig config);

    /// Applies one step to every parameter; missing gradients count as zero.
    void step(double lr);
    void zero_grad();
    const ParameterList& parameters() const { return params_; }

  private:
    ParameterList params_;
    AdamWConfig config_;
    std::vector<AdamWState> state_;
};

/// floor + (peak - floor) * (1 + cos(pi * t / T)) / 2
double cosine_lr(double t, double total, double peak, double floor);

/// Tracks the best validation score; improvement is strict.
class EarlyStopping {
  public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

    /// Records the score of `epoch` (1-based); true when training should stop.
    bool update(std::size_t epoch, double score);
    bool improved() const { return improved_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_score() const { return best_; }

  private:
    std::size_t patience_;
    std::size_t best_epoch_ = 0;
    std::size_t stale_ = 0;
    double best_ = 0.0;
    bool improved_ = false;
};

}  // namespace sparseformer
