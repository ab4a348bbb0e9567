#include "daft/grad_check.hpp"

#include <cmath>

#include "daft/ops.hpp"

namespace daft {

double grad_check(const GradCheckFn& fn, const std::vector<Tensor<double>>& inputs, double step) {
    // Fresh differentiable leaves; the caller's tensors are never mutated.
    std::vector<Tensor<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) {
        std::vector<double> data(in.data().begin(), in.data().end());
        leaves.push_back(Tensor<double>::from_data(in.shape(), std::move(data), true));
    }

    Tensor<double> probe = fn(leaves);
    Tensor<double> projection;
    if (probe.numel() > 1) {
        Rng rng(0xDAF7C4EC);
        projection = Tensor<double>::uniform(probe.shape(), rng, 0.25, 1.25);
    }
    auto scalarize = [&](const Tensor<double>& y) {
        return projection.defined() ? sum(mul(y, projection)) : y;
    };

    Tensor<double> loss = scalarize(probe);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) {
        analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
        leaf.zero_grad();
    }

    double max_err = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto buf = leaves[li].data_mut();
        for (std::size_t j = 0; j < buf.size(); ++j) {
            const double original = buf[j];
            buf[j] = original + step;
            const double f_plus = scalarize(fn(leaves)).item();
            buf[j] = original - step;
            const double f_minus = scalarize(fn(leaves)).item();
            buf[j] = original;
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double a = analytic[li][j];
            const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            max_err = std::max(max_err, std::fabs(a - numeric) / denom);
        }
    }
    return max_err;
}

}  // namespace daft
