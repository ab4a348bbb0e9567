#include "daft/nn.hpp"

#include <cmath>

namespace daft {

template <typename T>
LinearLayer<T>::LinearLayer(std::int64_t in, std::int64_t out, bool with_bias)
    : in_features(in), out_features(out), has_bias(with_bias) {
    weight = Tensor<T>::zeros({out, in}, true);
    if (with_bias) bias = Tensor<T>::zeros({out}, true);
}

template <typename T>
Conv3dLayer<T>::Conv3dLayer(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride_,
                            std::int64_t padding_, bool with_bias)
    : in_channels(in),
      out_channels(out),
      kernel(k),
      stride(stride_),
      padding(padding_),
      has_bias(with_bias) {
    weight = Tensor<T>::zeros({out, in, k, k, k}, true);
    if (with_bias) bias = Tensor<T>::zeros({out}, true);
}

template <typename T>
BatchNorm3d<T>::BatchNorm3d(std::int64_t channels_, bool affine)
    : affine_enabled(affine), channels(channels_) {
    if (affine) {
        gamma = Tensor<T>::full({channels_}, T(1), true);
        beta = Tensor<T>::zeros({channels_}, true);
    }
    running_mean.assign(static_cast<std::size_t>(channels_), T(0));
    running_var.assign(static_cast<std::size_t>(channels_), T(1));
}

template <typename T>
Tensor<T> BatchNorm3d<T>::forward(const Tensor<T>& x) {
    if (x.ndim() != 5) {
        throw ShapeError("batchnorm3d: input must be [N x C x D x H x W], got " +
                         shape_to_string(x.shape()));
    }
    if (x.dim(1) != channels) {
        throw ShapeError("batchnorm3d: input " + shape_to_string(x.shape()) + " has " +
                         std::to_string(x.dim(1)) + " channels, layer expects " +
                         std::to_string(channels));
    }
    const std::int64_t n = x.dim(0), c = channels;
    const std::int64_t spatial = x.dim(2) * x.dim(3) * x.dim(4);
    const std::int64_t m = n * spatial;  // reduction size per channel

    std::vector<T> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
    if (training_mode) {
        if (m < 2) {
            throw ValueError("batchnorm3d: train mode needs at least 2 values per channel, got " +
                             std::to_string(m));
        }
        std::vector<T> var(static_cast<std::size_t>(c), T(0));
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::int64_t b = 0; b < n; ++b) {
                const T* src = x.data().data() + (b * c + ch) * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) acc += src[s];
            }
            mean[ch] = static_cast<T>(acc / static_cast<double>(m));
            double vacc = 0.0;
            for (std::int64_t b = 0; b < n; ++b) {
                const T* src = x.data().data() + (b * c + ch) * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) {
                    const double d = static_cast<double>(src[s]) - static_cast<double>(mean[ch]);
                    vacc += d * d;
                }
            }
            var[ch] = static_cast<T>(vacc / static_cast<double>(m));
            inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);
        }
        // Running estimates track the unbiased batch variance.
        const T unbias = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mean[ch];
            running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * var[ch] * unbias;
        }
    } else {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            mean[ch] = running_mean[ch];
            inv_std[ch] = T(1) / std::sqrt(running_var[ch] + eps);
        }
    }

    std::vector<T> out(x.data().size());
    const bool affine = affine_enabled;
    const T* g = affine ? gamma.data().data() : nullptr;
    const T* b_ = affine ? beta.data().data() : nullptr;
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T* src = x.data().data() + (bn * c + ch) * spatial;
            T* dst = out.data() + (bn * c + ch) * spatial;
            const T scale = affine ? g[ch] * inv_std[ch] : inv_std[ch];
            const T shift = affine ? b_[ch] - mean[ch] * scale : -mean[ch] * scale;
            for (std::int64_t s = 0; s < spatial; ++s) dst[s] = src[s] * scale + shift;
        }
    }

    std::vector<std::shared_ptr<detail::Node<T>>> inputs{x.node_ptr()};
    if (affine) {
        inputs.push_back(gamma.node_ptr());
        inputs.push_back(beta.node_ptr());
    }
    const bool training = training_mode;
    return detail::make_node<T>(
        "batchnorm3d", x.shape(), std::move(out), std::move(inputs),
        [n, c, spatial, m, mean, inv_std, affine, training](detail::Node<T>& self) {
            auto& x_in = *self.inputs[0];
            detail::Node<T>* gamma_in = affine ? self.inputs[1].get() : nullptr;
            detail::Node<T>* beta_in = affine ? self.inputs[2].get() : nullptr;

            // Channel sums of dy and dy * x_hat, needed by every branch.
            std::vector<double> sum_dy(static_cast<std::size_t>(c), 0.0);
            std::vector<double> sum_dy_xhat(static_cast<std::size_t>(c), 0.0);
            for (std::int64_t bn = 0; bn < n; ++bn) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const T* dy = self.grad.data() + (bn * c + ch) * spatial;
                    const T* xs = x_in.data.data() + (bn * c + ch) * spatial;
                    double s1 = 0.0, s2 = 0.0;
                    for (std::int64_t s = 0; s < spatial; ++s) {
                        const double xhat = (xs[s] - mean[ch]) * inv_std[ch];
                        s1 += dy[s];
                        s2 += dy[s] * xhat;
                    }
                    sum_dy[ch] += s1;
                    sum_dy_xhat[ch] += s2;
                }
            }
            if (gamma_in && gamma_in->requires_grad) {
                gamma_in->ensure_grad();
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    gamma_in->grad[ch] += static_cast<T>(sum_dy_xhat[ch]);
                }
            }
            if (beta_in && beta_in->requires_grad) {
                beta_in->ensure_grad();
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    beta_in->grad[ch] += static_cast<T>(sum_dy[ch]);
                }
            }
            if (!x_in.requires_grad) return;
            x_in.ensure_grad();
            for (std::int64_t bn = 0; bn < n; ++bn) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const T* dy = self.grad.data() + (bn * c + ch) * spatial;
                    const T* xs = x_in.data.data() + (bn * c + ch) * spatial;
                    T* dx = x_in.grad.data() + (bn * c + ch) * spatial;
                    const T g_ch = gamma_in ? gamma_in->data[ch] : T(1);
                    if (training) {
                        const T k1 = g_ch * inv_std[ch];
                        const T mean_dy = static_cast<T>(sum_dy[ch] / static_cast<double>(m));
                        const T mean_dy_xhat =
                            static_cast<T>(sum_dy_xhat[ch] / static_cast<double>(m));
                        for (std::int64_t s = 0; s < spatial; ++s) {
                            const T xhat = (xs[s] - mean[ch]) * inv_std[ch];
                            dx[s] += k1 * (dy[s] - mean_dy - xhat * mean_dy_xhat);
                        }
                    } else {
                        const T k1 = g_ch * inv_std[ch];
                        for (std::int64_t s = 0; s < spatial; ++s) dx[s] += k1 * dy[s];
                    }
                }
            }
        });
}

template <typename T>
ResBlock<T>::ResBlock(std::int64_t in, std::int64_t out, std::int64_t stride_)
    : conv1(in, out, 3, stride_, 1),
      conv2(out, out, 3, 1, 1),
      bn1(out),
      bn2(out),
      in_channels(in),
      out_channels(out),
      stride(stride_) {
    has_projection = (in != out) || (stride_ != 1);
    if (has_projection) {
        shortcut_conv = Conv3dLayer<T>(in, out, 1, stride_, 0);
        shortcut_bn = BatchNorm3d<T>(out);
    }
}

template <typename T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x, ResBlockHook hook, const HookFn& modulate) {
    if (hook != ResBlockHook::none && !modulate) {
        throw Error("resblock: hook requested without a modulation callback");
    }
    Tensor<T> h = x;
    Tensor<T> shortcut_in = x;
    if (hook == ResBlockHook::before_block) {
        h = modulate(x);
        shortcut_in = h;
    }
    if (hook == ResBlockHook::before_conv1) h = modulate(h);
    h = conv1.forward(h);
    h = bn1.forward(h);
    if (hook == ResBlockHook::before_relu1) h = modulate(h);
    h = relu(h);
    if (hook == ResBlockHook::before_conv2) h = modulate(h);
    h = conv2.forward(h);
    h = bn2.forward(h);
    if (hook == ResBlockHook::before_shortcut_conv) shortcut_in = modulate(shortcut_in);
    Tensor<T> sc = has_projection ? shortcut_bn.forward(shortcut_conv.forward(shortcut_in))
                                  : shortcut_in;
    return relu(add(h, sc));
}

template <typename T>
std::int64_t ResBlock<T>::channels_at(ResBlockHook hook) const {
    switch (hook) {
        case ResBlockHook::before_block:
        case ResBlockHook::before_conv1:
        case ResBlockHook::before_shortcut_conv:
            return in_channels;
        case ResBlockHook::before_relu1:
        case ResBlockHook::before_conv2:
            return out_channels;
        case ResBlockHook::none:
            break;
    }
    throw Error("resblock: no channel count for hook 'none'");
}

template <typename T>
void ResBlock<T>::set_training(bool training) {
    bn1.training_mode = training;
    bn2.training_mode = training;
    if (has_projection) shortcut_bn.training_mode = training;
}

template <typename T>
std::int64_t ResBlock<T>::parameter_count() const {
    std::int64_t count = conv1.parameter_count() + conv2.parameter_count() +
                         bn1.parameter_count() + bn2.parameter_count();
    if (has_projection) {
        count += shortcut_conv.parameter_count() + shortcut_bn.parameter_count();
    }
    return count;
}

const char* to_string(ResBlockHook hook) {
    switch (hook) {
        case ResBlockHook::none: return "none";
        case ResBlockHook::before_block: return "before_block";
        case ResBlockHook::before_conv1: return "before_conv1";
        case ResBlockHook::before_relu1: return "before_relu1";
        case ResBlockHook::before_conv2: return "before_conv2";
        case ResBlockHook::before_shortcut_conv: return "before_shortcut_conv";
    }
    return "?";
}

template <typename T>
void kaiming_init(LinearLayer<T>& layer, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(layer.in_features));
    for (auto& w : layer.weight.data_mut()) w = static_cast<T>(rng.normal() * stddev);
    if (layer.has_bias) {
        for (auto& b : layer.bias.data_mut()) b = T(0);
    }
}

template <typename T>
void kaiming_init(Conv3dLayer<T>& layer, Rng& rng) {
    const double fan_in =
        static_cast<double>(layer.in_channels * layer.kernel * layer.kernel * layer.kernel);
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& w : layer.weight.data_mut()) w = static_cast<T>(rng.normal() * stddev);
    if (layer.has_bias) {
        for (auto& b : layer.bias.data_mut()) b = T(0);
    }
}

template <typename T>
void kaiming_init(BatchNorm3d<T>& bn) {
    if (bn.affine_enabled) {
        for (auto& g : bn.gamma.data_mut()) g = T(1);
        for (auto& b : bn.beta.data_mut()) b = T(0);
    }
    std::fill(bn.running_mean.begin(), bn.running_mean.end(), T(0));
    std::fill(bn.running_var.begin(), bn.running_var.end(), T(1));
}

template <typename T>
void kaiming_init(ResBlock<T>& block, Rng& rng) {
    kaiming_init(block.conv1, rng);
    kaiming_init(block.conv2, rng);
    kaiming_init(block.bn1);
    kaiming_init(block.bn2);
    if (block.has_projection) {
        kaiming_init(block.shortcut_conv, rng);
        kaiming_init(block.shortcut_bn);
    }
}

#define DAFT_INSTANTIATE_NN(T)                        \
    template struct LinearLayer<T>;                   \
    template struct Conv3dLayer<T>;                   \
    template struct BatchNorm3d<T>;                   \
    template struct ResBlock<T>;                      \
    template void kaiming_init(LinearLayer<T>&, Rng&); \
    template void kaiming_init(Conv3dLayer<T>&, Rng&); \
    template void kaiming_init(BatchNorm3d<T>&);       \
    template void kaiming_init(ResBlock<T>&, Rng&);

DAFT_INSTANTIATE_NN(float)
DAFT_INSTANTIATE_NN(double)

#undef DAFT_INSTANTIATE_NN

}  // namespace daft
