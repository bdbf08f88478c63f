#pragma once

#include <array>
#include <string>

#include "teleop/error.hpp"
#include "teleop/kinematics.hpp"
#include "teleop/protocol.hpp"
#include "teleop/types.hpp"

namespace teleop {

struct SafetyBox {
  Vec3 min_mm{-800.0, -800.0, 0.0};
  Vec3 max_mm{800.0, 800.0, 1700.0};

  bool contains(const Vec3& p) const {
    return (p.array() >= min_mm.array()).all() && (p.array() <= max_mm.array()).all();
  }
};

struct SimConfig {
  double tick_rate_hz = 100.0;
  double vel_limit_rad_s = 1.0;
  SafetyBox safety_box;
  // Virtual joint limits; when unset the arm's hard limits are used.
  std::optional<std::array<JointLimit, kNumJoints>> joint_planes;
};

struct SubmitResult {
  bool accepted = true;
  ErrorCode reason = ErrorCode::kPlaneViolation;  // meaningful only when rejected
  int joint = 0;  // 1-based joint for PlaneViolation
  int axis = -1;  // 0..2 for BoxViolation
  std::string detail;
};

// First-order, velocity-clamped joint executor. Targets are latest-wins; each
// tick the joints move toward the target along a straight joint-space line,
// no joint by more than vel_limit / tick_rate.
// A tick whose motion would carry the tip out of the safety box is held.
class RobotSim {
 public:
  RobotSim(ArmModel model, SimConfig config, const JointVector& initial);

  SubmitResult submit_target(const JointVector& target);
  StateBroadcast step();
  // Steps until the target is reached; returns the ticks taken.
  // Throws Error(kTimeout) if it is not reached within timeout_ticks.
  int settle(int timeout_ticks);

  bool settled() const;
  const JointVector& q() const { return q_; }
  const JointVector& target() const { return target_; }
  std::uint64_t tick() const { return tick_; }
  double time_ms() const { return static_cast<double>(tick_) * 1000.0 / config_.tick_rate_hz; }
  double max_step_rad() const { return config_.vel_limit_rad_s / config_.tick_rate_hz; }
  bool blocked() const { return blocked_; }
  const Vec3& tip_mm() const { return tip_mm_; }
  const ArmPoses& poses() const { return poses_; }
  const ArmModel& model() const { return model_; }
  const SimConfig& config() const { return config_; }
  const std::array<JointLimit, kNumJoints>& joint_planes() const { return planes_; }

 private:
  SubmitResult check(const JointVector& q) const;

  ArmModel model_;
  SimConfig config_;
  std::array<JointLimit, kNumJoints> planes_;
  JointVector q_;
  JointVector target_;
  std::uint64_t tick_ = 0;
  bool blocked_ = false;
  ArmPoses poses_;
  Vec3 tip_mm_;
};

}  // namespace teleop
