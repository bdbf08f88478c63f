#include "teleop/robot_sim.hpp"

#include <algorithm>
#include <cmath>

namespace teleop {
namespace {

constexpr double kSettleTolRad = 1e-6;
// Remaining distances within this slack of one step are snapped to the target,
// so accumulated rounding cannot add an extra sub-ulp tick.
constexpr double kSnapSlackRad = 1e-12;

}  // namespace

RobotSim::RobotSim(ArmModel model, SimConfig config, const JointVector& initial)
    : model_(std::move(model)), config_(std::move(config)) {
  model_.validate();
  if (!(config_.tick_rate_hz > 0.0) || !(config_.vel_limit_rad_s > 0.0)) {
    throw Error(ErrorCode::kBadConfig, "tick rate and velocity limit must be positive");
  }
  planes_ = config_.joint_planes.value_or(model_.joint_limits);
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& hard = model_.joint_limits[i];
    if (planes_[i].min < hard.min || planes_[i].max > hard.max ||
        !(planes_[i].min < planes_[i].max)) {
      throw Error(ErrorCode::kBadConfig,
                  "joint plane " + std::to_string(i + 1) + " must lie within the hard limits");
    }
  }
  const SubmitResult ok = check(initial);
  if (!ok.accepted) {
    throw Error(ErrorCode::kBadConfig, "initial configuration rejected: " + ok.detail);
  }
  q_ = initial;
  target_ = initial;
  poses_ = forward_kinematics(model_, q_);
  tip_mm_ = poses_.tip.position;
}

SubmitResult RobotSim::check(const JointVector& q) const {
  SubmitResult r;
  if (!q.allFinite()) {
    r.accepted = false;
    r.detail = "non-finite joint target";
    return r;
  }
  for (int i = 0; i < kNumJoints; ++i) {
    if (q[i] < planes_[i].min || q[i] > planes_[i].max) {
      r.accepted = false;
      r.reason = ErrorCode::kPlaneViolation;
      r.joint = i + 1;
      r.detail = "joint " + std::to_string(i + 1) + " outside its virtual plane";
      return r;
    }
  }
  const Vec3 tip = forward_kinematics(model_, q).tip.position;
  const auto& box = config_.safety_box;
  for (int a = 0; a < 3; ++a) {
    if (tip[a] < box.min_mm[a] || tip[a] > box.max_mm[a]) {
      r.accepted = false;
      r.reason = ErrorCode::kBoxViolation;
      r.axis = a;
      r.detail = std::string("tip outside safety box on ") + "xyz"[a];
      return r;
    }
  }
  return r;
}

SubmitResult RobotSim::submit_target(const JointVector& target) {
  SubmitResult r = check(target);
  if (r.accepted) target_ = target;
  return r;
}

StateBroadcast RobotSim::step() {
  // Synchronized clamp: the whole joint step is scaled so the slowest-to-arrive
  // joint moves at the limit and the others keep the same joint-space line.
  const double max_step = max_step_rad();
  const JointVector remaining = target_ - q_;
  const double largest = remaining.cwiseAbs().maxCoeff();
  JointVector next = largest <= max_step + kSnapSlackRad
                         ? target_
                         : JointVector(q_ + remaining * (max_step / largest));
  ++tick_;
  blocked_ = false;
  if (next != q_) {
    const ArmPoses p = forward_kinematics(model_, next);
    blocked_ = !config_.safety_box.contains(p.tip.position);
    if (!blocked_) {
      q_ = next;
      poses_ = p;
      tip_mm_ = p.tip.position;
    }
  }
  StateBroadcast b;
  b.tick = tick_;
  for (int i = 0; i < kNumJoints; ++i) b.joints_rad[i] = q_[i];
  b.tip_mm = {tip_mm_.x(), tip_mm_.y(), tip_mm_.z()};
  b.mode = "free_space";
  return b;
}

bool RobotSim::settled() const {
  return (q_ - target_).cwiseAbs().maxCoeff() < kSettleTolRad;
}

int RobotSim::settle(int timeout_ticks) {
  int ticks = 0;
  while (!settled()) {
    if (ticks >= timeout_ticks) {
      throw Error(ErrorCode::kTimeout,
                  "target not reached within " + std::to_string(timeout_ticks) + " ticks");
    }
    step();
    ++ticks;
  }
  return ticks;
}

}  // namespace teleop
