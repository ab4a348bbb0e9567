#include "daft/optim.hpp"

#include <cmath>

namespace daft {

template <typename T>
void AdamW<T>::step(std::span<Tensor<T>> params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].data().size(), T(0));
            v_[i].assign(params[i].data().size(), T(0));
        }
    }
    if (m_.size() != params.size()) {
        throw Error("adamw_step: parameter list changed size between steps");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto grad = params[i].grad();
        if (grad.size() != m_[i].size()) {
            throw Error("adamw_step: gradient size mismatch for parameter " + std::to_string(i));
        }
        {
            double acc = 0.0;
            for (const T g : grad) acc += std::fabs(static_cast<double>(g));
            if (!std::isfinite(acc)) {
                throw NumericalError("adamw_step: non-finite gradient for parameter " +
                                     std::to_string(i));
            }
        }
        auto theta = params[i].data_mut();
        T* m = m_[i].data();
        T* v = v_[i].data();
        const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
        const T one = T(1);
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const T g = grad[j];
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            const double m_hat = static_cast<double>(m[j]) / bc1;
            const double v_hat = static_cast<double>(v[j]) / bc2;
            const double update =
                m_hat / (std::sqrt(v_hat) + opts_.eps) + opts_.weight_decay * theta[j];
            theta[j] = static_cast<T>(theta[j] - opts_.lr * update);
        }
    }
}

template <typename T>
void zero_grads(std::span<Tensor<T>> params) {
    for (auto& p : params) p.zero_grad();
}

double lr_schedule(int epoch, int total_epochs, double lr0) {
    if (total_epochs <= 0 || epoch < 0 || epoch >= total_epochs) {
        throw ValueError("lr_schedule: epoch " + std::to_string(epoch) +
                         " out of range for total " + std::to_string(total_epochs));
    }
    const int b60 = (3 * total_epochs + 4) / 5;   // ceil(0.6 * total)
    const int b90 = (9 * total_epochs + 9) / 10;  // ceil(0.9 * total)
    if (epoch < b60) return lr0;
    if (epoch < b90) return lr0 / 10.0;
    return lr0 / 20.0;
}

template class AdamW<float>;
template class AdamW<double>;
template void zero_grads(std::span<Tensor<float>>);
template void zero_grads(std::span<Tensor<double>>);

}  // namespace daft
