#pragma once

#include <string>

#include <json.hpp>

#include "gridsight/nn.hpp"

// Checkpoint container: magic "GSCK", u32 version, u32 tensor count, then
// per tensor (sorted by name): u32 name length, UTF-8 name, u8 dtype tag
// (0 = f32, 1 = f64), u32 rank, u32 dims[rank], little-endian payload.
// A JSON sidecar at <path>.json carries config and training metadata.

namespace gridsight::ckpt {

void save(const std::string& path, const nn::ParamStore<float>& params,
          const nlohmann::json& metadata);

// Loads values into an already-constructed store; the name sets and shapes
// must match exactly (models are rebuilt from the sidecar's config first).
void load(const std::string& path, nn::ParamStore<float>& params);

nlohmann::json load_metadata(const std::string& path);

}  // namespace gridsight::ckpt
