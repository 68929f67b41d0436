#pragma once

#include <filesystem>

#include <json.hpp>

#include "umrl/numerics/param_vector.hpp"

namespace umrl {

/// On-disk parameters: `<base>.bin` holds the values as little-endian 64-bit
/// floats, `<base>.json` the segment layout plus caller metadata.
struct Checkpoint {
  ParamVector params;
  nlohmann::json meta;
};

nlohmann::json layout_to_json(const ParamLayout& layout);
LayoutPtr layout_from_json(const nlohmann::json& segments);

std::filesystem::path checkpoint_bin_path(const std::filesystem::path& base);
std::filesystem::path checkpoint_json_path(const std::filesystem::path& base);

/// Writes both files. `meta` keys are copied into the sidecar next to
/// "segments"; callers supply "seed" and "spec".
void save_checkpoint(const std::filesystem::path& base, const ParamVector& params, nlohmann::json meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& base);

bool checkpoint_exists(const std::filesystem::path& base);

}  // namespace umrl
