#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ccaps/geometry.hpp"

// Hidden poses of generated instances. Training code never includes this
// header; it exists for offline inspection of a generated dataset.
namespace ccaps::data::truth {

/// instance id -> transform that took the canonical instance to the stored cloud.
using PoseTable = std::map<std::string, geo::RigidTransform>;

void write_poses(const std::filesystem::path& path, const PoseTable& poses);
PoseTable read_poses(const std::filesystem::path& path);

}  // namespace ccaps::data::truth
