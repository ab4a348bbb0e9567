#include "daft/fusion.hpp"

#include <algorithm>

namespace daft {

const char* to_string(ScaleActivation a) {
    switch (a) {
        case ScaleActivation::identity: return "identity";
        case ScaleActivation::sigmoid: return "sigmoid";
        case ScaleActivation::tanh: return "tanh";
    }
    return "?";
}

const char* to_string(Task t) {
    return t == Task::diagnosis ? "diagnosis" : "survival";
}

const char* to_string(FusionVariant v) {
    switch (v) {
        case FusionVariant::image_only: return "image_only";
        case FusionVariant::tabular_linear: return "tabular_linear";
        case FusionVariant::linear_with_resnet_features: return "linear_with_resnet_features";
        case FusionVariant::concat_1fc: return "concat_1fc";
        case FusionVariant::concat_2fc: return "concat_2fc";
        case FusionVariant::fc1_concat_fc1: return "fc1_concat_fc1";
        case FusionVariant::duanmu: return "duanmu";
        case FusionVariant::film: return "film";
        case FusionVariant::daft: return "daft";
    }
    return "?";
}

ScaleActivation scale_activation_from_string(const std::string& s) {
    if (s == "identity") return ScaleActivation::identity;
    if (s == "sigmoid") return ScaleActivation::sigmoid;
    if (s == "tanh") return ScaleActivation::tanh;
    throw ValueError("unknown scale activation '" + s + "'");
}

Task task_from_string(const std::string& s) {
    if (s == "diagnosis") return Task::diagnosis;
    if (s == "survival") return Task::survival;
    throw ValueError("unknown task '" + s + "'");
}

FusionVariant fusion_variant_from_string(const std::string& s) {
    for (const auto v :
         {FusionVariant::image_only, FusionVariant::tabular_linear,
          FusionVariant::linear_with_resnet_features, FusionVariant::concat_1fc,
          FusionVariant::concat_2fc, FusionVariant::fc1_concat_fc1, FusionVariant::duanmu,
          FusionVariant::film, FusionVariant::daft}) {
        if (s == to_string(v)) return v;
    }
    throw ValueError("unknown fusion variant '" + s + "'");
}

ResBlockHook hook_from_string(const std::string& s) {
    for (const auto h : {ResBlockHook::before_block, ResBlockHook::before_conv1,
                         ResBlockHook::before_relu1, ResBlockHook::before_conv2,
                         ResBlockHook::before_shortcut_conv}) {
        if (s == to_string(h)) return h;
    }
    throw ValueError("unknown modulation location '" + s + "'");
}

std::int64_t DaftConfig::bottleneck(std::int64_t channels, std::int64_t tabular_dim) const {
    if (bottleneck_dim > 0) return bottleneck_dim;
    if (squeeze_factor <= 0) throw ValueError("daft: squeeze_factor must be positive");
    return std::max<std::int64_t>(1, (channels + tabular_dim) / squeeze_factor);
}

template <typename T>
DaftAux<T>::DaftAux(std::int64_t channels_, std::int64_t tabular_dim_, const DaftConfig& cfg_)
    : cfg(cfg_), channels(channels_), tabular_dim(tabular_dim_) {
    if (!cfg.scale_enabled && !cfg.shift_enabled) {
        throw ValueError("daft: at least one of scale/shift must be enabled");
    }
    bottleneck_dim = cfg.bottleneck(channels, tabular_dim);
    const std::int64_t in_dim = cfg.condition_on_image ? channels + tabular_dim : tabular_dim;
    if (in_dim < bottleneck_dim) {
        throw ValueError("daft: bottleneck must squeeze, input width " + std::to_string(in_dim) +
                         " is smaller than bottleneck " + std::to_string(bottleneck_dim));
    }
    squeeze = LinearLayer<T>(in_dim, bottleneck_dim, /*with_bias=*/false);
    expand = LinearLayer<T>(bottleneck_dim, 2 * channels, /*with_bias=*/false);
}

template <typename T>
ModulationPair<T> DaftAux<T>::forward(const Tensor<T>& feature_map,
                                      const Tensor<T>& tabular) const {
    if (tabular.ndim() != 2 || tabular.dim(1) != tabular_dim) {
        throw ShapeError("daft_aux: tabular input " + shape_to_string(tabular.shape()) +
                         " does not match P=" + std::to_string(tabular_dim));
    }
    if (feature_map.ndim() != 5 || feature_map.dim(1) != channels) {
        throw ShapeError("daft_aux: feature map " + shape_to_string(feature_map.shape()) +
                         " does not match C=" + std::to_string(channels));
    }
    const std::int64_t n = feature_map.dim(0);
    if (tabular.dim(0) != n) {
        throw ShapeError("daft_aux: batch mismatch between image and tabular inputs");
    }

    Tensor<T> joint = cfg.condition_on_image
                          ? concat_lastdim<T>({global_avg_pool3d(feature_map), tabular})
                          : tabular;
    Tensor<T> hidden = relu(squeeze.forward(joint));
    Tensor<T> packed = expand.forward(hidden);
    Tensor<T> alpha_raw = narrow_lastdim(packed, 0, channels);
    Tensor<T> beta_raw = narrow_lastdim(packed, channels, channels);

    ModulationPair<T> mod;
    if (cfg.scale_enabled) {
        switch (cfg.scale_activation) {
            case ScaleActivation::identity: mod.alpha = alpha_raw; break;
            case ScaleActivation::sigmoid: mod.alpha = sigmoid(alpha_raw); break;
            case ScaleActivation::tanh: mod.alpha = tanh_op(alpha_raw); break;
        }
    } else {
        mod.alpha = Tensor<T>::full({n, channels}, T(1));
    }
    mod.beta = cfg.shift_enabled ? beta_raw : Tensor<T>::zeros({n, channels});
    return mod;
}

template <typename T>
Tensor<T> daft_transform(const Tensor<T>& feature_map, const ModulationPair<T>& mod) {
    if (feature_map.ndim() != 5) {
        throw ShapeError("daft_transform: feature map must be [N x C x D x H x W], got " +
                         shape_to_string(feature_map.shape()));
    }
    if (mod.alpha.shape() != mod.beta.shape() || mod.alpha.ndim() != 2 ||
        mod.alpha.dim(0) != feature_map.dim(0) || mod.alpha.dim(1) != feature_map.dim(1)) {
        throw ShapeError("daft_transform: modulation " + shape_to_string(mod.alpha.shape()) +
                         " does not match feature map " + shape_to_string(feature_map.shape()));
    }
    auto scaled = mul(broadcast_channelwise(mod.alpha, feature_map.shape()), feature_map);
    return add(scaled, broadcast_channelwise(mod.beta, feature_map.shape()));
}

template <typename T>
std::vector<Tensor<T>> duanmu_gate(const Tensor<T>& tabular,
                                   std::span<const LinearLayer<T>> gates) {
    std::vector<Tensor<T>> out;
    out.reserve(gates.size());
    for (const auto& g : gates) out.push_back(sigmoid(g.forward(tabular)));
    return out;
}

namespace {

void validate_model_config(const ModelConfig& cfg) {
    std::vector<std::string> problems;
    if (cfg.uses_backbone()) {
        if (cfg.block_channels.empty()) problems.push_back("block_channels is empty");
        if (cfg.block_channels.size() != cfg.block_strides.size()) {
            problems.push_back("block_channels and block_strides differ in length");
        }
        for (auto c : cfg.block_channels) {
            if (c <= 0) problems.push_back("block_channels entries must be positive");
        }
        for (auto s : cfg.block_strides) {
            if (s <= 0) problems.push_back("block_strides entries must be positive");
        }
        if (cfg.stem_channels <= 0) problems.push_back("stem_channels must be positive");
        if (cfg.in_channels <= 0) problems.push_back("in_channels must be positive");
    }
    if (cfg.tabular_dim <= 0) problems.push_back("tabular_dim must be positive");
    if (cfg.task == Task::diagnosis && cfg.num_classes < 2) {
        problems.push_back("num_classes must be at least 2 for diagnosis");
    }
    if ((cfg.fusion_variant == FusionVariant::concat_2fc ||
         cfg.fusion_variant == FusionVariant::fc1_concat_fc1) &&
        cfg.concat_bottleneck_dim <= 0) {
        problems.push_back("concat_bottleneck_dim must be positive");
    }
    if (!problems.empty()) {
        std::string msg = "invalid model config:";
        for (const auto& p : problems) msg += " [" + p + "]";
        throw ValueError(msg);
    }
}

}  // namespace

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    validate_model_config(cfg);
    Model<T> m;
    m.cfg_ = cfg;
    Rng rng(seed);

    std::int64_t latent_dim = 0;
    if (cfg.uses_backbone()) {
        m.stem_ = Conv3dLayer<T>(cfg.in_channels, cfg.stem_channels, 3, 1, 1);
        m.stem_bn_ = BatchNorm3d<T>(cfg.stem_channels);
        std::int64_t in = cfg.stem_channels;
        for (std::size_t i = 0; i < cfg.block_channels.size(); ++i) {
            m.blocks_.emplace_back(in, cfg.block_channels[i], cfg.block_strides[i]);
            in = cfg.block_channels[i];
        }
        latent_dim = in;
        // The affine parameters of a BatchNorm directly feeding the
        // modulation are redundant with it and are turned off.
        if (cfg.has_modulation() && cfg.daft.location == ResBlockHook::before_relu1) {
            auto& last = m.blocks_.back();
            last.bn1 = BatchNorm3d<T>(last.out_channels, /*affine=*/false);
        }
        kaiming_init(m.stem_, rng);
        kaiming_init(m.stem_bn_);
        for (auto& block : m.blocks_) kaiming_init(block, rng);
    }

    const std::int64_t p = cfg.tabular_dim;
    const std::int64_t out_dim = cfg.output_dim();
    switch (cfg.fusion_variant) {
        case FusionVariant::image_only:
            m.head_ = LinearLayer<T>(latent_dim, out_dim, true);
            break;
        case FusionVariant::tabular_linear:
            m.head_ = LinearLayer<T>(p, out_dim, true);
            break;
        case FusionVariant::linear_with_resnet_features:
            m.head_ = LinearLayer<T>(latent_dim + p, out_dim, true);
            break;
        case FusionVariant::concat_1fc:
            m.head_ = LinearLayer<T>(latent_dim + p, out_dim, true);
            break;
        case FusionVariant::concat_2fc:
            m.bottleneck_fc_ = LinearLayer<T>(latent_dim + p, cfg.concat_bottleneck_dim, true);
            kaiming_init(*m.bottleneck_fc_, rng);
            m.head_ = LinearLayer<T>(cfg.concat_bottleneck_dim, out_dim, true);
            break;
        case FusionVariant::fc1_concat_fc1:
            m.bottleneck_fc_ = LinearLayer<T>(p, cfg.concat_bottleneck_dim, true);
            kaiming_init(*m.bottleneck_fc_, rng);
            m.head_ = LinearLayer<T>(latent_dim + cfg.concat_bottleneck_dim, out_dim, true);
            break;
        case FusionVariant::duanmu:
            for (const auto channels : cfg.block_channels) {
                m.duanmu_gates_.emplace_back(p, channels, /*with_bias=*/false);
                kaiming_init(m.duanmu_gates_.back(), rng);
            }
            m.head_ = LinearLayer<T>(latent_dim, out_dim, true);
            break;
        case FusionVariant::film:
        case FusionVariant::daft: {
            DaftConfig daft_cfg = cfg.daft;
            daft_cfg.condition_on_image = cfg.fusion_variant == FusionVariant::daft;
            const std::int64_t hook_channels =
                m.blocks_.back().channels_at(daft_cfg.location);
            m.daft_aux_.emplace(hook_channels, p, daft_cfg);
            kaiming_init(m.daft_aux_->squeeze, rng);
            kaiming_init(m.daft_aux_->expand, rng);
            m.head_ = LinearLayer<T>(latent_dim, out_dim, true);
            break;
        }
    }
    kaiming_init(m.head_, rng);

    if (cfg.fusion_variant == FusionVariant::linear_with_resnet_features) {
        m.backbone_frozen_ = true;
        m.stem_.weight.set_requires_grad(false);
        if (m.stem_bn_.affine_enabled) {
            m.stem_bn_.gamma.set_requires_grad(false);
            m.stem_bn_.beta.set_requires_grad(false);
        }
        for (auto& block : m.blocks_) {
            block.conv1.weight.set_requires_grad(false);
            block.conv2.weight.set_requires_grad(false);
            if (block.bn1.affine_enabled) {
                block.bn1.gamma.set_requires_grad(false);
                block.bn1.beta.set_requires_grad(false);
            }
            if (block.bn2.affine_enabled) {
                block.bn2.gamma.set_requires_grad(false);
                block.bn2.beta.set_requires_grad(false);
            }
            if (block.has_projection) {
                block.shortcut_conv.weight.set_requires_grad(false);
                if (block.shortcut_bn.affine_enabled) {
                    block.shortcut_bn.gamma.set_requires_grad(false);
                    block.shortcut_bn.beta.set_requires_grad(false);
                }
            }
        }
    }
    return m;
}

template <typename T>
Tensor<T> Model<T>::apply_modulation(const Tensor<T>& feature_map, const Tensor<T>& tabular,
                                     const ModulationOverride<T>* override_spec,
                                     ModulationPair<T>* capture) {
    if (bypass_modulation_) return feature_map;
    ModulationPair<T> mod = daft_aux_->forward(feature_map, tabular);
    if (capture) *capture = mod;
    if (override_spec) {
        const std::int64_t n = feature_map.dim(0);
        const std::int64_t c = feature_map.dim(1);
        auto tiled = [&](const std::vector<T>& per_channel, const char* what) {
            if (static_cast<std::int64_t>(per_channel.size()) != c) {
                throw ShapeError(std::string("override ") + what + " expects " +
                                 std::to_string(c) + " channels, got " +
                                 std::to_string(per_channel.size()));
            }
            std::vector<T> data(static_cast<std::size_t>(n * c));
            for (std::int64_t i = 0; i < n; ++i) {
                std::copy(per_channel.begin(), per_channel.end(), data.begin() + i * c);
            }
            return Tensor<T>::from_data({n, c}, std::move(data));
        };
        if (override_spec->fix_alpha) mod.alpha = tiled(*override_spec->fix_alpha, "fix_alpha");
        if (override_spec->fix_beta) mod.beta = tiled(*override_spec->fix_beta, "fix_beta");
        auto noised = [&](const Tensor<T>& v, double sigma, std::uint64_t seed) {
            if (sigma == 0.0) return v;
            Rng noise_rng(seed);
            std::vector<T> data(static_cast<std::size_t>(n * c));
            for (auto& x : data) x = static_cast<T>(noise_rng.normal() * sigma);
            return add(v, Tensor<T>::from_data({n, c}, std::move(data)));
        };
        if (override_spec->noise_alpha) {
            mod.alpha =
                noised(mod.alpha, override_spec->noise_alpha->first, override_spec->noise_alpha->second);
        }
        if (override_spec->noise_beta) {
            mod.beta =
                noised(mod.beta, override_spec->noise_beta->first, override_spec->noise_beta->second);
        }
    }
    return daft_transform(feature_map, mod);
}

template <typename T>
Tensor<T> Model<T>::backbone_latent(const Tensor<T>& image, const Tensor<T>& tabular,
                                    const ModulationOverride<T>* override_spec,
                                    ModulationPair<T>* capture) {
    if (!image.defined()) {
        throw ValueError(std::string("variant ") + to_string(cfg_.fusion_variant) +
                         " requires an image input");
    }
    Tensor<T> h = relu(stem_bn_.forward(stem_.forward(image)));
    std::vector<Tensor<T>> gates;
    if (cfg_.fusion_variant == FusionVariant::duanmu) {
        gates = duanmu_gate<T>(tabular, duanmu_gates_);
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const bool modulated_block = cfg_.has_modulation() && i + 1 == blocks_.size();
        if (modulated_block) {
            auto hook_fn = [&](const Tensor<T>& f) {
                return apply_modulation(f, tabular, override_spec, capture);
            };
            h = blocks_[i].forward(h, cfg_.daft.location, hook_fn);
        } else {
            h = blocks_[i].forward(h);
        }
        if (cfg_.fusion_variant == FusionVariant::duanmu) {
            h = mul(broadcast_channelwise(gates[i], h.shape()), h);
        }
    }
    return global_avg_pool3d(h);
}

template <typename T>
Tensor<T> Model<T>::forward_impl(const Tensor<T>& image, const Tensor<T>& tabular,
                                 const ModulationOverride<T>* override_spec,
                                 ModulationPair<T>* capture) {
    if (override_spec && !override_spec->empty() && !cfg_.has_modulation()) {
        throw ValueError(std::string("variant ") + to_string(cfg_.fusion_variant) +
                         " has no modulation to override");
    }
    if (cfg_.fusion_variant != FusionVariant::image_only) {
        if (!tabular.defined() || tabular.ndim() != 2 || tabular.dim(1) != cfg_.tabular_dim) {
            throw ShapeError("model forward: tabular input must be [N x " +
                             std::to_string(cfg_.tabular_dim) + "]");
        }
    }
    switch (cfg_.fusion_variant) {
        case FusionVariant::tabular_linear:
            return head_.forward(tabular);
        case FusionVariant::image_only:
            return head_.forward(backbone_latent(image, tabular, nullptr, nullptr));
        case FusionVariant::linear_with_resnet_features:
        case FusionVariant::concat_1fc: {
            auto latent = backbone_latent(image, tabular, nullptr, nullptr);
            return head_.forward(concat_lastdim<T>({latent, tabular}));
        }
        case FusionVariant::concat_2fc: {
            auto latent = backbone_latent(image, tabular, nullptr, nullptr);
            auto squeezed = relu(bottleneck_fc_->forward(concat_lastdim<T>({latent, tabular})));
            return head_.forward(squeezed);
        }
        case FusionVariant::fc1_concat_fc1: {
            auto encoded = relu(bottleneck_fc_->forward(tabular));
            auto latent = backbone_latent(image, tabular, nullptr, nullptr);
            return head_.forward(concat_lastdim<T>({latent, encoded}));
        }
        case FusionVariant::duanmu:
        case FusionVariant::film:
        case FusionVariant::daft:
            return head_.forward(backbone_latent(image, tabular, override_spec, capture));
    }
    throw Error("unreachable fusion variant");
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& image, const Tensor<T>& tabular) {
    return forward_impl(image, tabular, nullptr, nullptr);
}

template <typename T>
Tensor<T> Model<T>::forward_with_override(const Tensor<T>& image, const Tensor<T>& tabular,
                                          const ModulationOverride<T>& override_spec) {
    return forward_impl(image, tabular, &override_spec, nullptr);
}

template <typename T>
ModulationPair<T> Model<T>::compute_modulation(const Tensor<T>& image, const Tensor<T>& tabular) {
    if (!cfg_.has_modulation()) {
        throw ValueError(std::string("variant ") + to_string(cfg_.fusion_variant) +
                         " has no modulation layer");
    }
    ModulationPair<T> captured;
    (void)forward_impl(image, tabular, nullptr, &captured);
    if (!captured.alpha.defined()) throw Error("modulation was not reached in forward");
    return captured;
}

template <typename T>
void Model<T>::set_training(bool training) {
    training_ = training;
    // A frozen backbone always runs in eval mode with its stored statistics.
    const bool backbone_training = training && !backbone_frozen_;
    if (cfg_.uses_backbone()) {
        stem_bn_.training_mode = backbone_training;
        for (auto& block : blocks_) block.set_training(backbone_training);
    }
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::named_parameters() {
    std::vector<NamedTensor<T>> out;
    auto push = [&out](const std::string& name, const Tensor<T>& t) {
        if (t.defined()) out.push_back({name, t});
    };
    if (cfg_.uses_backbone()) {
        push("stem.weight", stem_.weight);
        push("stem.bias", stem_.bias);
        if (stem_bn_.affine_enabled) {
            push("stem_bn.gamma", stem_bn_.gamma);
            push("stem_bn.beta", stem_bn_.beta);
        }
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const std::string prefix = "block" + std::to_string(i) + ".";
            auto& b = blocks_[i];
            push(prefix + "conv1.weight", b.conv1.weight);
            push(prefix + "conv2.weight", b.conv2.weight);
            if (b.bn1.affine_enabled) {
                push(prefix + "bn1.gamma", b.bn1.gamma);
                push(prefix + "bn1.beta", b.bn1.beta);
            }
            if (b.bn2.affine_enabled) {
                push(prefix + "bn2.gamma", b.bn2.gamma);
                push(prefix + "bn2.beta", b.bn2.beta);
            }
            if (b.has_projection) {
                push(prefix + "shortcut_conv.weight", b.shortcut_conv.weight);
                if (b.shortcut_bn.affine_enabled) {
                    push(prefix + "shortcut_bn.gamma", b.shortcut_bn.gamma);
                    push(prefix + "shortcut_bn.beta", b.shortcut_bn.beta);
                }
            }
        }
    }
    if (daft_aux_) {
        push("daft_aux.squeeze.weight", daft_aux_->squeeze.weight);
        push("daft_aux.expand.weight", daft_aux_->expand.weight);
    }
    for (std::size_t i = 0; i < duanmu_gates_.size(); ++i) {
        push("duanmu_gate" + std::to_string(i) + ".weight", duanmu_gates_[i].weight);
    }
    if (bottleneck_fc_) {
        push("bottleneck_fc.weight", bottleneck_fc_->weight);
        push("bottleneck_fc.bias", bottleneck_fc_->bias);
    }
    push("head.weight", head_.weight);
    push("head.bias", head_.bias);
    return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::trainable_parameters() {
    std::vector<Tensor<T>> out;
    for (auto& [name, tensor] : named_parameters()) {
        if (tensor.requires_grad()) out.push_back(tensor);
    }
    return out;
}

template <typename T>
std::vector<typename Model<T>::NamedBuffer> Model<T>::named_buffers() {
    std::vector<NamedBuffer> out;
    if (cfg_.uses_backbone()) {
        out.push_back({"stem_bn.running_mean", &stem_bn_.running_mean});
        out.push_back({"stem_bn.running_var", &stem_bn_.running_var});
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const std::string prefix = "block" + std::to_string(i) + ".";
            auto& b = blocks_[i];
            out.push_back({prefix + "bn1.running_mean", &b.bn1.running_mean});
            out.push_back({prefix + "bn1.running_var", &b.bn1.running_var});
            out.push_back({prefix + "bn2.running_mean", &b.bn2.running_mean});
            out.push_back({prefix + "bn2.running_var", &b.bn2.running_var});
            if (b.has_projection) {
                out.push_back({prefix + "shortcut_bn.running_mean", &b.shortcut_bn.running_mean});
                out.push_back({prefix + "shortcut_bn.running_var", &b.shortcut_bn.running_var});
            }
        }
    }
    return out;
}

template <typename T>
std::int64_t Model<T>::parameter_count() {
    std::int64_t count = 0;
    for (auto& [name, tensor] : named_parameters()) count += tensor.numel();
    return count;
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> modulation_stats(
    Model<T>& model, std::span<const std::pair<Tensor<T>, Tensor<T>>> batches) {
    if (!model.config().has_modulation()) {
        throw ValueError(std::string("variant ") + to_string(model.config().fusion_variant) +
                         " has no modulation layer");
    }
    if (batches.empty()) throw ValueError("modulation_stats: empty dataset");
    const bool was_training = model.training();
    model.set_training(false);
    std::vector<double> alpha_sum, beta_sum;
    std::int64_t total = 0;
    for (const auto& [image, tabular] : batches) {
        auto mod = model.compute_modulation(image, tabular);
        const std::int64_t n = mod.alpha.dim(0), c = mod.alpha.dim(1);
        if (alpha_sum.empty()) {
            alpha_sum.assign(static_cast<std::size_t>(c), 0.0);
            beta_sum.assign(static_cast<std::size_t>(c), 0.0);
        }
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                alpha_sum[ch] += static_cast<double>(mod.alpha.data()[i * c + ch]);
                beta_sum[ch] += static_cast<double>(mod.beta.data()[i * c + ch]);
            }
        }
        total += n;
    }
    model.set_training(was_training);
    std::vector<T> mean_alpha(alpha_sum.size()), mean_beta(beta_sum.size());
    for (std::size_t ch = 0; ch < alpha_sum.size(); ++ch) {
        mean_alpha[ch] = static_cast<T>(alpha_sum[ch] / static_cast<double>(total));
        mean_beta[ch] = static_cast<T>(beta_sum[ch] / static_cast<double>(total));
    }
    return {std::move(mean_alpha), std::move(mean_beta)};
}

#define DAFT_INSTANTIATE_FUSION(T)                                                      \
    template struct DaftAux<T>;                                                         \
    template Tensor<T> daft_transform(const Tensor<T>&, const ModulationPair<T>&);      \
    template std::vector<Tensor<T>> duanmu_gate(const Tensor<T>&,                       \
                                                std::span<const LinearLayer<T>>);       \
    template class Model<T>;                                                            \
    template Model<T> build_model(const ModelConfig&, std::uint64_t);                   \
    template std::pair<std::vector<T>, std::vector<T>> modulation_stats(                \
        Model<T>&, std::span<const std::pair<Tensor<T>, Tensor<T>>>);

DAFT_INSTANTIATE_FUSION(float)
DAFT_INSTANTIATE_FUSION(double)

#undef DAFT_INSTANTIATE_FUSION

}  // namespace daft
