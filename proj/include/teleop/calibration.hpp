#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "teleop/kinematics.hpp"
#include "teleop/types.hpp"

namespace teleop {

// Maps operator-frame points (already in mm) into the robot base frame.
struct RigidTransform {
  Quat rotation = Quat::Identity();
  Vec3 translation_mm = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation_mm; }
  RigidTransform inverse() const {
    const Quat inv = rotation.conjugate();
    return {inv, -(inv * translation_mm)};
  }
  // (a * b).apply(p) == a.apply(b.apply(p))
  RigidTransform operator*(const RigidTransform& b) const {
    return {(rotation * b.rotation).normalized(), rotation * b.translation_mm + translation_mm};
  }
};

inline Vec3 apply_transform(const RigidTransform& t, const Vec3& p_mm) { return t.apply(p_mm); }

// The operator device reports meters, the robot works in millimeters.
inline Vec3 meters_to_millimeters(const Vec3& p_m) { return p_m * 1000.0; }

struct PointPair {
  Vec3 operator_m;
  Vec3 robot_mm;
  std::string label;
};

struct PointPairSet {
  std::vector<PointPair> pairs;
};

struct Registration {
  RigidTransform transform;
  double residual_rms_mm = 0.0;
  double residual_max_mm = 0.0;
  std::size_t n_pairs = 0;
};

// Least-squares rigid fit dst ~ R * src + t (centroids + SVD of the
// cross-covariance, reflection corrected). Both sets in mm.
// Throws TooFewPairs (< 3) or DegenerateGeometry (collinear / coincident src).
Registration register_points(std::span<const Vec3> src_mm, std::span<const Vec3> dst_mm);

// Converts operator readings to mm, then registers them onto the robot points.
Registration register_frames(const PointPairSet& pairs);

// A verification marker: the operator reading plus the robot-side truth, either
// as a surveyed point or as the joint configuration the robot was driven to
// (then the camera tip is the marker).
struct MarkerPoint {
  Vec3 operator_m;
  std::optional<Vec3> robot_mm;
  std::optional<JointVector> joints;
  std::string label;
};

struct CalibrationReport {
  std::vector<double> errors_mm;
  double mean_mm = 0.0;
  double max_mm = 0.0;
};

CalibrationReport verify_calibration(const ArmModel& model, const RigidTransform& t,
                                     std::span<const MarkerPoint> markers);

// pairs.json: { "pairs": [ { "operator_m": [x,y,z], "robot_mm": [x,y,z], "label"?: s } ] }
PointPairSet point_pairs_from_json(const nlohmann::json& j);
nlohmann::json point_pairs_to_json(const PointPairSet& set);
PointPairSet load_point_pairs(const std::string& path);

// calibration.json: rotation_wxyz, translation_mm, residual stats, timestamp.
nlohmann::json calibration_to_json(const Registration& reg, const std::string& timestamp);
RigidTransform calibration_from_json(const nlohmann::json& j);
RigidTransform load_calibration(const std::string& path);

}  // namespace teleop
