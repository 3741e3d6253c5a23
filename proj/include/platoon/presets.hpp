#pragma once

#include "platoon/assembly.hpp"
#include "platoon/core.hpp"

#include <string>
#include <vector>

namespace platoon {

std::vector<std::string> platoon_preset_names();

// "small", "medium" or "large"; ten followers on a chain graph.
PlatoonConfig platoon_preset(const std::string& name);

// Weight design for a named platoon at horizon p in 1..5.
WeightSchedule weight_preset(const std::string& name, int p);

// Same config with a_max replaced for every vehicle (leader included).
PlatoonConfig with_max_accel(PlatoonConfig config, double a_max);

PlatoonConfig chain_config(int n, const VehicleParams& follower, double tau, double v_min, double v_max,
                           double delta);

}  // namespace platoon
