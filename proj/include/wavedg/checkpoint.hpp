#pragma once

#include <string>

#include <json.hpp>

#include "wavedg/params.hpp"

namespace wavedg {

inline constexpr int kCheckpointSchemaVersion = 1;

// Single-archive JSON parameter store. Doubles are serialized with
// shortest-round-trip formatting, so reloads are value-exact.
void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& metadata);

// Loads values into an already-constructed store; the parameter name sets
// must match exactly (a mismatch means the checkpoint was produced with a
// different module configuration). Returns the stored metadata.
nlohmann::json load_checkpoint(const std::string& path, ParamStore& store);

nlohmann::json peek_checkpoint_metadata(const std::string& path);

}  // namespace wavedg
