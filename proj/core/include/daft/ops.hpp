#pragma once

#include <vector>

#include "daft/tensor.hpp"

namespace daft {

// Elementwise binary ops require identical shapes; there is no implicit
// broadcasting beyond the dedicated ops below.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T c);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> tanh_op(const Tensor<T>& a);
template <typename T> Tensor<T> exp_op(const Tensor<T>& a);
/// Natural log; non-positive entries raise ValueError.
template <typename T> Tensor<T> log_op(const Tensor<T>& a);

/// Sum of all entries, rank-0 result.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

/// [m x k] * [k x n] -> [m x n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x [N x in], weight [out x in], optional bias [out] -> [N x out].
/// Pass a default-constructed Tensor for "no bias".
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape new_shape);

/// Concatenate along the last dimension; all other dimensions must match.
template <typename T> Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts);

/// Slice [start, start+length) of the last dimension.
template <typename T>
Tensor<T> narrow_lastdim(const Tensor<T>& a, std::int64_t start, std::int64_t length);

/// Replicate values[n,c] across all spatial positions of a [N x C x D x H x W]
/// volume. This realizes the per-channel application of a scale or shift.
template <typename T>
Tensor<T> broadcast_channelwise(const Tensor<T>& values, const Shape& target_shape);
template <typename T>
Tensor<T> broadcast_channelwise(const Tensor<T>& values, const Tensor<T>& target);

/// Row-wise log softmax over a [N x K] matrix, computed via log-sum-exp.
template <typename T> Tensor<T> log_softmax_rows(const Tensor<T>& logits);

/// 3D convolution. input [N x C_in x D x H x W], weight [C_out x C_in x k x k x k],
/// optional bias [C_out]. Output spatial size: (dim + 2*padding - k) / stride + 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::int64_t stride = 1, std::int64_t padding = 0);

/// [N x C x D x H x W] -> [N x C], mean over the spatial dimensions.
template <typename T> Tensor<T> global_avg_pool3d(const Tensor<T>& input);

}  // namespace daft
