#pragma once

#include <string>

#include "trajmix/model.hpp"

namespace trajmix {

/// Serializes the full parameter set (with basis and training span) to a
/// single versioned JSON document. Matrices are stored row-major.
std::string snapshot_to_json(const ModelParams& params);
ModelParams snapshot_from_json(const std::string& text);

void save_snapshot(const ModelParams& params, const std::string& path);
ModelParams load_snapshot(const std::string& path);

}  // namespace trajmix
