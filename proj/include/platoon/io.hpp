#pragma once

#include "platoon/assembly.hpp"
#include "platoon/closed_loop.hpp"
#include "platoon/core.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace platoon {

nlohmann::json config_to_json(const PlatoonConfig& config);
PlatoonConfig config_from_json(const nlohmann::json& j);

nlohmann::json weights_to_json(const WeightSchedule& weights);
WeightSchedule weights_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

// Columns k, x0, v0. The step length comes from a sidecar JSON ({"tau": ...}) next to the CSV with the
// extension replaced by .json.
LeaderTrace load_leader_csv(const std::string& path);

// Header: k, t, v_0, u_0, then S_{i-1}_{i}, v_i, u_i per follower. The last row has no controls.
void write_trajectory_csv(const std::string& path, const PlatoonConfig& config, const TrajectoryRecord& rec);

}  // namespace platoon
