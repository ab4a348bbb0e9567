#pragma once

#include <string>

#include "daft/config.hpp"
#include "daft/data.hpp"
#include "daft/fusion.hpp"

namespace daft {

/// On disk a checkpoint is a directory with a text manifest (model config,
/// normalization stats, and one line per tensor with name, dtype and shape)
/// plus one raw tensor file per parameter/buffer. Round-trips bit-exactly.
template <typename T>
void save_checkpoint(Model<T>& model, const NormalizationStats& stats, const std::string& dir);

template <typename T>
struct LoadedCheckpoint {
    Model<T> model;
    NormalizationStats stats;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& dir);

/// Copies the backbone tensors (stem and blocks) of a checkpointed model
/// into `model`; used to provide the frozen features of
/// linear_with_resnet_features.
template <typename T>
void load_backbone_from_checkpoint(Model<T>& model, const std::string& dir);

}  // namespace daft
