#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "physprior/tensor.hpp"

namespace physprior::ag {

// PCKP container: magic "PCKP", u32 LE version=1, u32 tensor count, then per
// tensor: u32 name length, UTF-8 name, u32 rank, rank x u32 dims, u8 dtype
// tag (0 = f32, 1 = f64), raw little-endian data. Optimizer state rides
// along as tensors named "adam.m.<param>", "adam.v.<param>" and a scalar
// "adam.t".
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

const Tensor* checkpoint_find(const NamedTensors& tensors, const std::string& name);

// Missing or shape-mismatched entries are reported by name.
Tensor checkpoint_get(const NamedTensors& tensors, const std::string& name,
                      const std::vector<int>& expected_shape);

}  // namespace physprior::ag
