#pragma once

#include <functional>
#include <vector>

#include "daft/tensor.hpp"

namespace daft {

using GradCheckFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients against central finite differences in
/// float64. Returns the max over all input entries of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// Non-scalar outputs are reduced with a fixed pseudo-random projection so
/// that every output element contributes to the checked scalar.
double grad_check(const GradCheckFn& fn, const std::vector<Tensor<double>>& inputs,
                  double step = 1e-6);

}  // namespace daft
