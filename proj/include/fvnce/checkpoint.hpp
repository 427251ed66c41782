#pragma once

// Checkpoint file layout:
//   8 bytes   magic "FVNCECK1"
//   8 bytes   header length H, little-endian uint64
//   H bytes   UTF-8 JSON header: {"slices": [{"name", "rows", "cols"}...],
//             "count": N, "seed": ..., "step": ..., plus caller metadata}
//   8N bytes  parameters as little-endian IEEE-754 binary64

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "fvnce/tape.hpp"

namespace fvnce::diff {

struct Checkpoint {
  ParamVector params;
  nlohmann::json header;
};

void save_checkpoint(const std::string& path, const ParamVector& params, std::uint64_t seed,
                     std::int64_t step, const nlohmann::json& metadata = nlohmann::json::object());

[[nodiscard]] Checkpoint load_checkpoint(const std::string& path);

}  // namespace fvnce::diff
