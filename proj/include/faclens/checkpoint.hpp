#pragma once

// FLNM model checkpoints: shapes, float32 parameters in tensor order, and a
// JSON echo of the configuration that produced the model.

#include <filesystem>
#include <iosfwd>
#include <string>

#include "faclens/probe.hpp"

namespace faclens {

inline constexpr char kModelMagic[4] = {'F', 'L', 'N', 'M'};
inline constexpr std::uint16_t kModelFormatVersion = 1;

struct Checkpoint {
    ProbeModel model;
    std::string config_json = "{}";
};

std::size_t write_checkpoint(const Checkpoint& checkpoint, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);

std::size_t save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The model as it will read back: every parameter rounded to float32.
ProbeModel round_to_float32(const ProbeModel& model);

}  // namespace faclens
