#pragma once

#include <string>

#include "mtslstm/mts_model.hpp"

namespace mts {

// Versioned little-endian binary container for all model weights, with shape
// headers and the config fingerprint. Round trips bit-exactly.
void save_checkpoint(const std::string& path, const MtsModelParams& params,
                     std::uint64_t config_hash);

// Throws ConfigError when the stored fingerprint does not match.
MtsModelParams load_checkpoint(const std::string& path,
                               std::uint64_t expected_config_hash);

// Standardization stats as JSON (doubles serialized losslessly).
void save_stats(const std::string& path, const StandardizationStats& stats);
StandardizationStats load_stats(const std::string& path);

}  // namespace mts
