#pragma once

#include <json.hpp>

#include "irk/params.hpp"

namespace irk {

// Single-file checkpoint: 8-byte magic, uint32 version, uint64 header
// length, JSON header (tensor name -> shape/dtype/offset plus free-form
// meta), then raw little-endian float32 payloads. Load followed by save is
// byte-identical.
struct Checkpoint {
  ParamStore<float> params;
  nlohmann::ordered_json meta;
};

void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const nlohmann::ordered_json& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace irk
