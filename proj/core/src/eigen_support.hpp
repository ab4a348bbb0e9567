#pragma once

// Internal Eigen helpers shared by the dense kernels. Eigen stays out of the
// public headers on purpose.

#include <Eigen/Core>

namespace daft::detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;

template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

}  // namespace daft::detail
