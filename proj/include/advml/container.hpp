#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advml/tensor.hpp"

namespace advml {

/// Binary tensor container shared by model checkpoints and patch files.
///
/// Layout, all integers unsigned 32-bit little-endian:
///
///     "AMF1"
///     descriptor_length, descriptor (UTF-8)
///     tensor_count
///     per tensor: rank, dims[rank], values (float64 little-endian, row-major)
///     metadata_length, metadata (UTF-8 JSON)
struct TensorContainer {
  std::string descriptor;
  std::vector<Tensor> tensors;
  std::string metadata;
};

inline constexpr char kContainerMagic[4] = {'A', 'M', 'F', '1'};

std::vector<std::uint8_t> encode_container(const TensorContainer& c);
TensorContainer decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const TensorContainer& c);
TensorContainer read_container(const std::filesystem::path& path);

}  // namespace advml
