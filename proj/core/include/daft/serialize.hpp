#pragma once

#include <cstdint>
#include <string>

#include "daft/tensor.hpp"

namespace daft {

/// Canonical dtype tag used in sidecar descriptors and manifests.
template <typename T> const char* dtype_name();
template <> inline const char* dtype_name<float>() { return "float32"; }
template <> inline const char* dtype_name<double>() { return "float64"; }

/// Writes the tensor as a raw little-endian buffer plus a text sidecar
/// holding dtype and shape. This is the on-disk format for checkpoints,
/// dataset volumes, and test fixtures.
template <typename T>
void save_tensor(const Tensor<T>& t, const std::string& data_path, const std::string& meta_path);

/// Loads a tensor previously written by save_tensor. The sidecar dtype must
/// match T; a data file whose size disagrees with the sidecar shape is an
/// error, never a silent truncation.
template <typename T>
Tensor<T> load_tensor(const std::string& data_path, const std::string& meta_path);

/// FNV-1a over a file's bytes; used for dataset manifest checksums.
std::uint64_t file_checksum(const std::string& path);

}  // namespace daft
