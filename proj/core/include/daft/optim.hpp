#pragma once

#include <span>
#include <vector>

#include "daft/tensor.hpp"

namespace daft {

/// AdamW with decoupled weight decay:
///   theta <- theta - lr * ( m_hat / (sqrt(v_hat) + eps) + weight_decay * theta )
/// The decay term never enters the moment buffers.
template <typename T>
class AdamW {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW() = default;
    explicit AdamW(Options opts) : opts_(opts) {}

    double lr() const { return opts_.lr; }
    void set_lr(double lr) { opts_.lr = lr; }
    std::int64_t step_count() const { return t_; }

    /// One update over `params`; requires populated gradients. The parameter
    /// list must be identical (same tensors, same order) on every call.
    /// A non-finite gradient aborts with a diagnostic naming the parameter.
    void step(std::span<Tensor<T>> params);

private:
    Options opts_;
    std::int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

/// Clears gradients on every tensor, re-arming them for the next backward.
template <typename T>
void zero_grads(std::span<Tensor<T>> params);

/// Step learning-rate schedule: lr0 until 60% of total epochs are completed,
/// lr0/10 until 90%, lr0/20 afterwards. A boundary is the first epoch index
/// at or past the fraction, i.e. ceil(fraction * total_epochs).
double lr_schedule(int epoch, int total_epochs, double lr0);

}  // namespace daft
