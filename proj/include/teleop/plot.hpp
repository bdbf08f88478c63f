#pragma once

#include <string>
#include <vector>

#include "teleop/metrics.hpp"

namespace teleop {

// Two panels (top view XY, side view XZ) with the hand trace in red and the
// tip trace in blue, both panels sharing one mm scale. Throws EmptySeries.
std::string render_trajectory_svg(const std::vector<AlignedPair>& aligned);

}  // namespace teleop
