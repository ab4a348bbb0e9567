#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "daft/nn.hpp"

namespace daft {

enum class ScaleActivation { identity, sigmoid, tanh };
enum class Task { diagnosis, survival };

enum class FusionVariant {
    image_only,
    tabular_linear,
    linear_with_resnet_features,
    concat_1fc,
    concat_2fc,
    fc1_concat_fc1,
    duanmu,
    film,
    daft,
};

const char* to_string(ScaleActivation a);
const char* to_string(Task t);
const char* to_string(FusionVariant v);
ScaleActivation scale_activation_from_string(const std::string& s);
Task task_from_string(const std::string& s);
FusionVariant fusion_variant_from_string(const std::string& s);
ResBlockHook hook_from_string(const std::string& s);

/// Configuration of the affine modulation module. With bottleneck_dim == 0
/// the bottleneck width is floor((C + P) / squeeze_factor). A disabled scale
/// forces alpha = 1 exactly; a disabled shift forces beta = 0 exactly.
struct DaftConfig {
    std::int64_t bottleneck_dim = 4;
    std::int64_t squeeze_factor = 7;
    ScaleActivation scale_activation = ScaleActivation::identity;
    bool scale_enabled = true;
    bool shift_enabled = true;
    ResBlockHook location = ResBlockHook::before_conv1;
    /// true: condition on pooled image features and tabular data (DAFT);
    /// false: condition on tabular data alone (FiLM).
    bool condition_on_image = true;

    std::int64_t bottleneck(std::int64_t channels, std::int64_t tabular_dim) const;
};

struct ModelConfig {
    FusionVariant fusion_variant = FusionVariant::daft;
    Task task = Task::diagnosis;
    std::int64_t in_channels = 1;
    std::int64_t stem_channels = 8;
    std::vector<std::int64_t> block_channels = {16, 32, 64, 64};
    std::vector<std::int64_t> block_strides = {2, 2, 2, 1};
    std::int64_t tabular_dim = 15;
    std::int64_t num_classes = 3;
    /// Bottleneck width of the concat_2fc / fc1_concat_fc1 baselines.
    std::int64_t concat_bottleneck_dim = 4;
    DaftConfig daft;
    /// Optional checkpoint providing the frozen backbone of
    /// linear_with_resnet_features; a seeded fresh backbone is used if empty.
    std::string frozen_backbone_checkpoint;

    std::int64_t output_dim() const { return task == Task::survival ? 1 : num_classes; }
    bool uses_backbone() const { return fusion_variant != FusionVariant::tabular_linear; }
    bool has_modulation() const {
        return fusion_variant == FusionVariant::daft || fusion_variant == FusionVariant::film;
    }
};

template <typename T>
struct ModulationPair {
    Tensor<T> alpha;  // [N x C]
    Tensor<T> beta;   // [N x C]
};

/// Test-time modification of the modulation: replace alpha/beta with fixed
/// per-channel vectors, or perturb them with Gaussian noise.
template <typename T>
struct ModulationOverride {
    std::optional<std::vector<T>> fix_alpha;
    std::optional<std::vector<T>> fix_beta;
    std::optional<std::pair<double, std::uint64_t>> noise_alpha;  // (sigma, seed)
    std::optional<std::pair<double, std::uint64_t>> noise_beta;

    bool empty() const {
        return !fix_alpha && !fix_beta && !noise_alpha && !noise_beta;
    }
};

/// Auxiliary network producing the modulation: pool the feature map (DAFT
/// only), concatenate the tabular vector, squeeze through a bias-free FC,
/// relu, then expand to [alpha_raw | beta]. The scale activation applies to
/// alpha_raw only.
template <typename T>
struct DaftAux {
    LinearLayer<T> squeeze;  // (C+P) -> b, or P -> b when conditioning on tabular only
    LinearLayer<T> expand;   // b -> 2C
    DaftConfig cfg;
    std::int64_t channels = 0;
    std::int64_t tabular_dim = 0;
    std::int64_t bottleneck_dim = 0;

    DaftAux() = default;
    DaftAux(std::int64_t channels, std::int64_t tabular_dim, const DaftConfig& cfg);

    ModulationPair<T> forward(const Tensor<T>& feature_map, const Tensor<T>& tabular) const;
    std::int64_t parameter_count() const {
        return squeeze.parameter_count() + expand.parameter_count();
    }
};

/// F'[n,c,s] = alpha[n,c] * F[n,c,s] + beta[n,c]; differentiable through the
/// feature map and both modulation vectors.
template <typename T>
Tensor<T> daft_transform(const Tensor<T>& feature_map, const ModulationPair<T>& mod);

/// Gate vectors for the multiplicative-fusion baseline: one bias-free FC per
/// gated block, sigmoid output in (0,1), applied to the block's output.
template <typename T>
std::vector<Tensor<T>> duanmu_gate(const Tensor<T>& tabular,
                                   std::span<const LinearLayer<T>> gates);

/// A complete model for one fusion variant: ResNet backbone (when the
/// variant uses the image), fusion machinery, and task head. Forward returns
/// class logits (diagnosis) or a single risk score per subject (survival).
template <typename T>
class Model {
public:
    Model() = default;

    Tensor<T> forward(const Tensor<T>& image, const Tensor<T>& tabular);
    Tensor<T> forward_with_override(const Tensor<T>& image, const Tensor<T>& tabular,
                                    const ModulationOverride<T>& override_spec);
    /// Runs the forward pass far enough to produce the modulation for this
    /// batch; errors when the variant has none.
    ModulationPair<T> compute_modulation(const Tensor<T>& image, const Tensor<T>& tabular);

    void set_training(bool training);
    bool training() const { return training_; }
    /// When set, the modulation layer is skipped entirely (identity hook).
    void set_modulation_bypass(bool bypass) { bypass_modulation_ = bypass; }

    const ModelConfig& config() const { return cfg_; }
    std::vector<NamedTensor<T>> named_parameters();
    std::vector<Tensor<T>> trainable_parameters();
    struct NamedBuffer {
        std::string name;
        std::vector<T>* data;
    };
    std::vector<NamedBuffer> named_buffers();
    std::int64_t parameter_count();

    template <typename U>
    friend Model<U> build_model(const ModelConfig& cfg, std::uint64_t seed);

private:
    Tensor<T> forward_impl(const Tensor<T>& image, const Tensor<T>& tabular,
                           const ModulationOverride<T>* override_spec,
                           ModulationPair<T>* capture);
    Tensor<T> backbone_latent(const Tensor<T>& image, const Tensor<T>& tabular,
                              const ModulationOverride<T>* override_spec,
                              ModulationPair<T>* capture);
    Tensor<T> apply_modulation(const Tensor<T>& feature_map, const Tensor<T>& tabular,
                               const ModulationOverride<T>* override_spec,
                               ModulationPair<T>* capture);

    ModelConfig cfg_;
    bool training_ = false;
    bool bypass_modulation_ = false;
    bool backbone_frozen_ = false;

    Conv3dLayer<T> stem_;
    BatchNorm3d<T> stem_bn_;
    std::vector<ResBlock<T>> blocks_;
    std::optional<DaftAux<T>> daft_aux_;
    std::vector<LinearLayer<T>> duanmu_gates_;
    std::optional<LinearLayer<T>> bottleneck_fc_;
    LinearLayer<T> head_;
};

/// Assemble any fusion variant from its config, deterministically seeded.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Mean alpha and beta per channel across a dataset presented as
/// (image, tabular) batches, evaluated in eval mode.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> modulation_stats(
    Model<T>& model, std::span<const std::pair<Tensor<T>, Tensor<T>>> batches);

}  // namespace daft
