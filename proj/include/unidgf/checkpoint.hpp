#pragma once

#include <json.hpp>

#include <string>

#include "unidgf/tensor.hpp"

namespace unidgf {

// Checkpoint layout: magic "UDGF", one version byte, a little-endian u64
// header length, the JSON header (config echo plus named tensor directory
// with shapes and byte offsets), then float32 little-endian payloads in
// directory order. Saving a loaded checkpoint reproduces it byte for byte.

constexpr char kCheckpointMagic[4] = {'U', 'D', 'G', 'F'};
constexpr uint8_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  nlohmann::json config;
  ParamStore store;  // entries in payload order, requires_grad = false
};

void save_checkpoint(const std::string& path, const nlohmann::json& config,
                     const ParamStore& store);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace unidgf
