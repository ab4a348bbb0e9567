#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "daft/ops.hpp"
#include "daft/rng.hpp"
#include "daft/tensor.hpp"

namespace daft {

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

/// Fully connected layer, weight stored [out x in]. When constructed without
/// bias no bias parameter exists at all; parameter counts reflect this.
template <typename T>
struct LinearLayer {
    Tensor<T> weight;
    Tensor<T> bias;  // undefined when has_bias == false
    std::int64_t in_features = 0;
    std::int64_t out_features = 0;
    bool has_bias = true;

    LinearLayer() = default;
    LinearLayer(std::int64_t in, std::int64_t out, bool with_bias);

    Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }
    std::int64_t parameter_count() const {
        return out_features * in_features + (has_bias ? out_features : 0);
    }
};

template <typename T>
struct Conv3dLayer {
    Tensor<T> weight;  // [C_out x C_in x k x k x k]
    Tensor<T> bias;    // undefined when has_bias == false
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    std::int64_t kernel = 3;
    std::int64_t stride = 1;
    std::int64_t padding = 1;
    bool has_bias = false;

    Conv3dLayer() = default;
    Conv3dLayer(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride,
                std::int64_t padding, bool with_bias = false);

    Tensor<T> forward(const Tensor<T>& x) const { return conv3d(x, weight, bias, stride, padding); }
    std::int64_t parameter_count() const {
        return out_channels * in_channels * kernel * kernel * kernel +
               (has_bias ? out_channels : 0);
    }
};

/// 3D batch normalization over (batch, spatial) per channel. Train mode uses
/// batch statistics and updates the running estimates; eval mode uses the
/// running estimates only. With affine_enabled == false the gamma/beta
/// parameters do not exist.
template <typename T>
struct BatchNorm3d {
    Tensor<T> gamma, beta;  // undefined when affine_enabled == false
    std::vector<T> running_mean, running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
    bool affine_enabled = true;
    bool training_mode = false;
    std::int64_t channels = 0;

    BatchNorm3d() = default;
    explicit BatchNorm3d(std::int64_t channels, bool affine = true);

    Tensor<T> forward(const Tensor<T>& x);
    std::int64_t parameter_count() const { return affine_enabled ? 2 * channels : 0; }
};

enum class ResBlockHook {
    none,
    before_block,
    before_conv1,
    before_relu1,
    before_conv2,
    before_shortcut_conv,
};

const char* to_string(ResBlockHook hook);

/// Residual block:
///   out = relu( bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x) )
/// The shortcut is the identity when in_channels == out_channels and
/// stride == 1, otherwise a 1x1x1 projection conv followed by BatchNorm.
/// A modulation callback can be attached at one of five hook points; the
/// before_block hook feeds both the main path and the shortcut, the
/// before_shortcut_conv hook feeds the shortcut branch only.
template <typename T>
struct ResBlock {
    Conv3dLayer<T> conv1, conv2;
    BatchNorm3d<T> bn1, bn2;
    bool has_projection = false;
    Conv3dLayer<T> shortcut_conv;
    BatchNorm3d<T> shortcut_bn;
    std::int64_t in_channels = 0, out_channels = 0, stride = 1;

    ResBlock() = default;
    ResBlock(std::int64_t in, std::int64_t out, std::int64_t stride);

    using HookFn = std::function<Tensor<T>(const Tensor<T>&)>;
    Tensor<T> forward(const Tensor<T>& x, ResBlockHook hook = ResBlockHook::none,
                      const HookFn& modulate = nullptr);

    /// Channel count of the tensor a hook at `hook` would see.
    std::int64_t channels_at(ResBlockHook hook) const;
    void set_training(bool training);
    std::int64_t parameter_count() const;
};

/// He initialization: weights ~ Normal(0, sqrt(2 / fan_in)), biases zero.
template <typename T> void kaiming_init(LinearLayer<T>& layer, Rng& rng);
template <typename T> void kaiming_init(Conv3dLayer<T>& layer, Rng& rng);
/// BatchNorm reset: gamma = 1, beta = 0, running stats to (0, 1).
template <typename T> void kaiming_init(BatchNorm3d<T>& bn);
template <typename T> void kaiming_init(ResBlock<T>& block, Rng& rng);

}  // namespace daft
