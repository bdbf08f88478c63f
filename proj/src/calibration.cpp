#include "teleop/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/LU>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "teleop/error.hpp"

namespace teleop {
namespace {

Vec3 vec3_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorCode::kBadConfig, std::string(what) + " must be a 3-element array");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

Registration register_points(std::span<const Vec3> src_mm, std::span<const Vec3> dst_mm) {
  if (src_mm.size() != dst_mm.size()) {
    throw Error(ErrorCode::kTooFewPairs, "point sets differ in size");
  }
  const std::size_t n = src_mm.size();
  if (n < 3) {
    throw Error(ErrorCode::kTooFewPairs,
                "registration needs at least 3 pairs, got " + std::to_string(n));
  }

  Vec3 c_src = Vec3::Zero();
  Vec3 c_dst = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    c_src += src_mm[i];
    c_dst += dst_mm[i];
  }
  c_src /= static_cast<double>(n);
  c_dst /= static_cast<double>(n);

  Eigen::MatrixX3d centered(n, 3);
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = src_mm[i] - c_src;
    centered.row(static_cast<Eigen::Index>(i)) = a.transpose();
    cov += a * (dst_mm[i] - c_dst).transpose();
  }

  const Vec3 spread = Eigen::JacobiSVD<Eigen::MatrixX3d>(centered).singularValues();
  if (!(spread[0] > 0.0) || spread[1] <= 1e-9 * spread[0]) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "operator points are collinear or coincident; re-collect markers");
  }

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = v * d * u.transpose();

  Registration reg;
  reg.transform.rotation = Quat(r).normalized();
  reg.transform.translation_mm = c_dst - r * c_src;
  reg.n_pairs = n;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = (reg.transform.apply(src_mm[i]) - dst_mm[i]).norm();
    sum_sq += e * e;
    reg.residual_max_mm = std::max(reg.residual_max_mm, e);
  }
  reg.residual_rms_mm = std::sqrt(sum_sq / static_cast<double>(n));
  return reg;
}

Registration register_frames(const PointPairSet& set) {
  std::vector<Vec3> src;
  std::vector<Vec3> dst;
  src.reserve(set.pairs.size());
  dst.reserve(set.pairs.size());
  for (const auto& p : set.pairs) {
    src.push_back(meters_to_millimeters(p.operator_m));
    dst.push_back(p.robot_mm);
  }
  return register_points(src, dst);
}

CalibrationReport verify_calibration(const ArmModel& model, const RigidTransform& t,
                                     std::span<const MarkerPoint> markers) {
  CalibrationReport report;
  double sum = 0.0;
  for (const auto& m : markers) {
    Vec3 truth;
    if (m.joints) {
      truth = forward_kinematics(model, *m.joints).tip.position;
    } else if (m.robot_mm) {
      truth = *m.robot_mm;
    } else {
      throw Error(ErrorCode::kMissingField, "marker '" + m.label + "' has no robot reference");
    }
    const double e = (t.apply(meters_to_millimeters(m.operator_m)) - truth).norm();
    report.errors_mm.push_back(e);
    report.max_mm = std::max(report.max_mm, e);
    sum += e;
  }
  if (!markers.empty()) report.mean_mm = sum / static_cast<double>(markers.size());
  return report;
}

PointPairSet point_pairs_from_json(const nlohmann::json& j) {
  PointPairSet set;
  try {
    for (const auto& p : j.at("pairs")) {
      PointPair pair;
      pair.operator_m = vec3_from_json(p.at("operator_m"), "operator_m");
      pair.robot_mm = vec3_from_json(p.at("robot_mm"), "robot_mm");
      pair.label = p.value("label", std::string{});
      set.pairs.push_back(std::move(pair));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, std::string("pairs file: ") + e.what());
  }
  return set;
}

nlohmann::json point_pairs_to_json(const PointPairSet& set) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : set.pairs) {
    nlohmann::json e = {{"operator_m", {p.operator_m.x(), p.operator_m.y(), p.operator_m.z()}},
                        {"robot_mm", {p.robot_mm.x(), p.robot_mm.y(), p.robot_mm.z()}}};
    if (!p.label.empty()) e["label"] = p.label;
    pairs.push_back(std::move(e));
  }
  return {{"pairs", pairs}};
}

PointPairSet load_point_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kBadConfig, "cannot open pairs file " + path);
  try {
    return point_pairs_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kBadConfig, path + ": " + e.what());
  }
}

nlohmann::json calibration_to_json(const Registration& reg, const std::string& timestamp) {
  const Quat& q = reg.transform.rotation;
  const Vec3& t = reg.transform.translation_mm;
  return {{"rotation_wxyz", {q.w(), q.x(), q.y(), q.z()}},
          {"translation_mm", {t.x(), t.y(), t.z()}},
          {"residual_rms_mm", reg.residual_rms_mm},
          {"residual_max_mm", reg.residual_max_mm},
          {"n_pairs", reg.n_pairs},
          {"timestamp", timestamp}};
}

RigidTransform calibration_from_json(const nlohmann::json& j) {
  try {
    const auto& q = j.at("rotation_wxyz");
    if (!q.is_array() || q.size() != 4) {
      throw Error(ErrorCode::kBadConfig, "rotation_wxyz must be a 4-element array");
    }
    Quat rot(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
    if (!(rot.norm() > 0.0)) throw Error(ErrorCode::kBadConfig, "rotation_wxyz is zero");
    return {rot.normalized(), vec3_from_json(j.at("translation_mm"), "translation_mm")};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, std::string("calibration: ") + e.what());
  }
}

RigidTransform load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kBadConfig, "cannot open calibration file " + path);
  try {
    return calibration_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kBadConfig, path + ": " + e.what());
  }
}

}  // namespace teleop
