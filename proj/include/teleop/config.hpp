#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "teleop/kinematics.hpp"
#include "teleop/robot_sim.hpp"
#include "teleop/session.hpp"

namespace teleop {

struct TeleopConfig {
  ArmModel arm = ArmModel::kuka_like();
  JointVector home = default_home();
  SessionConfig session;
  SimConfig sim;
  int handshake_timeout_ms = 5000;

  // Camera pointing straight down roughly 490 mm in front of the base.
  static JointVector default_home();
};

// Keys (all optional): arm (object, see arm_model_from_json) or arm_file (path),
// home_joints_deg[7], scale, insert_increment_mm, insert_velocity_mm_s,
// standoff_mm, max_insert_depth_mm, tick_rate_hz, vel_limit_rad_s,
// safety_box_mm {min[3], max[3]}, joint_planes_deg [[min,max] x 7],
// handshake_timeout_ms. Throws BadConfig.
TeleopConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
nlohmann::json config_to_json(const TeleopConfig& c);
TeleopConfig load_config(const std::string& path);

}  // namespace teleop
