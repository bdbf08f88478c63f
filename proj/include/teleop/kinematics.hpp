#pragma once

#include <array>

#include <nlohmann/json_fwd.hpp>

#include "teleop/types.hpp"

namespace teleop {

struct JointLimit {
  double min = 0.0;  // rad
  double max = 0.0;  // rad
};

// Revolute joint axis in the zero configuration, base frame.
struct JointAxis {
  Vec3 direction;
  Vec3 point;  // mm, any point on the axis
};

// 7-revolute serial arm with alternating roll/pitch joints (z, y, z, -y, z, y, z)
// and a rigid tool extending along the flange z-axis. In the zero configuration
// the arm stands straight up the base z-axis.
struct ArmModel {
  // shoulder, elbow, wrist, flange offsets in mm
  std::array<double, 4> link_offsets_mm{360.0, 420.0, 400.0, 126.0};
  std::array<JointLimit, kNumJoints> joint_limits{};
  double tool_offset_mm = 300.0;

  static ArmModel kuka_like();

  // Throws Error(kInvalidModel) when an invariant does not hold.
  void validate() const;

  std::array<JointAxis, kNumJoints> joint_axes() const;
  JointVector limit_midpoints() const;
  bool within_limits(const JointVector& q, double slack = 0.0) const;
  JointVector clamp_to_limits(const JointVector& q) const;
  // Distance from the shoulder joint to the furthest reachable tip position.
  double reach_mm() const;
  Vec3 shoulder_mm() const { return {0.0, 0.0, link_offsets_mm[0]}; }
};

// Arm description file: { "link_offsets_mm": [4], "joint_limits_deg": [[min,max] x 7],
// "tool_offset_mm": number }. Missing keys keep the kuka_like() defaults.
ArmModel arm_model_from_json(const nlohmann::json& j);
nlohmann::json arm_model_to_json(const ArmModel& model);
ArmModel load_arm_model(const std::string& path);

struct ArmPoses {
  Pose flange;
  Pose tip;
};

ArmPoses forward_kinematics(const ArmModel& model, const JointVector& q);

// Rows: linear velocity of the tool tip (mm/rad), then angular velocity (rad/rad).
using Jacobian = Eigen::Matrix<double, 6, kNumJoints>;

Jacobian jacobian(const ArmModel& model, const JointVector& q);

// sqrt(det(J J^T)); zero at singular configurations.
double manipulability(const Jacobian& jac);

struct IkOptions {
  double pos_tol_mm = 1e-3;
  double ori_tol_rad = 1e-4;
  int max_iterations = 200;
  double lambda_base = 0.5;
  double lambda_max = 50.0;
  double manipulability_threshold = 1e-4;
  double nullspace_gain = 0.1;
  // Angular task rows are scaled by this length (mm/rad) before damping so that
  // both halves of the error vector are expressed in mm.
  double orientation_weight_mm = 500.0;
  // Per-iteration cap on the largest joint increment.
  double max_step_rad = 0.2;
  // An attempt is abandoned after this many iterations without progress.
  int stall_iterations = 20;
  // Extra attempts from the range midpoints and fixed pseudo-random seeds.
  int restarts = 32;
};

struct IkResult {
  JointVector q;
  int iterations = 0;
  double position_error_mm = 0.0;
  double orientation_error_rad = 0.0;
};

// Damped least squares on the tip pose with null-space drift toward the joint
// range midpoints. Every iterate is clamped to the joint limits. If the attempt
// from `seed` stalls, the solver restarts from a fixed sequence of seeds, so
// results stay deterministic. max_iterations applies per attempt.
// Throws Error(kNotConverged) or Error(kOutOfLimits).
IkResult inverse_kinematics(const ArmModel& model, const Pose& target,
                            const JointVector& seed, const IkOptions& opts = {});

}  // namespace teleop
