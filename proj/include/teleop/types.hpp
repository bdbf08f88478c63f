#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace teleop {

inline constexpr int kNumJoints = 7;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
// Joint angles in rad, base to flange.
using JointVector = Eigen::Matrix<double, kNumJoints, 1>;

// Position in mm, orientation as a unit quaternion, both in the robot base frame.
struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
};

inline bool all_finite(const JointVector& q) { return q.allFinite(); }

// Rotation vector (log map) of a rotation matrix.
inline Vec3 rotation_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

}  // namespace teleop
