#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "rehar/config.hpp"
#include "rehar/model.hpp"

namespace rehar {

inline constexpr char kCheckpointMagic[4] = {'R', 'H', 'A', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): magic, u32 version, u32 config length + config text
// (RunConfig format), u32 parameter count, then per parameter in canonical
// order: u32 name length, name, u32 rank, rank x u32 dims, float32 payload.
// Parameters are stored at 32-bit precision.
struct Checkpoint {
  RunConfig config;  // config.model describes the architecture
  ReHARModel model;
};

void save_checkpoint(std::ostream& out, const ReHARModel& model, const RunConfig& config);
void save_checkpoint(const std::filesystem::path& path, const ReHARModel& model, const RunConfig& config);
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rehar
