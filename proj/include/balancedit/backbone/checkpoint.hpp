#pragma once

#include <string>

#include "balancedit/backbone/model.hpp"

namespace balancedit::backbone {

inline constexpr int kCheckpointFormatVersion = 1;

// "<JSON header>\n<little-endian float64 blob>". The header carries the config,
// seed, format_version and one {name, shape, offset} record per parameter.
std::vector<std::uint8_t> serialize_checkpoint(const BackboneModel& model);
BackboneModel deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const BackboneModel& model, const std::string& path);
BackboneModel load_checkpoint(const std::string& path);

}  // namespace balancedit::backbone
