#include "teleop/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "teleop/error.hpp"

namespace teleop {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Rigid motion of a revolute joint: rotation by angle about an axis through point.
Eigen::Isometry3d joint_motion(const JointAxis& axis, double angle) {
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  t.linear() = Eigen::AngleAxisd(angle, axis.direction).toRotationMatrix();
  t.translation() = axis.point - t.linear() * axis.point;
  return t;
}

struct ChainState {
  std::array<Vec3, kNumJoints> axis;   // current joint axis directions
  std::array<Vec3, kNumJoints> point;  // current points on each axis
  Eigen::Isometry3d flange;
  Eigen::Isometry3d tip;
};

ChainState evaluate_chain(const ArmModel& model, const JointVector& q) {
  if (!q.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "joint vector contains non-finite values");
  }
  const auto axes = model.joint_axes();
  ChainState s;
  Eigen::Isometry3d acc = Eigen::Isometry3d::Identity();
  for (int i = 0; i < kNumJoints; ++i) {
    s.axis[i] = acc.linear() * axes[i].direction;
    s.point[i] = acc * axes[i].point;
    acc = acc * joint_motion(axes[i], q[i]);
  }
  const auto& d = model.link_offsets_mm;
  Eigen::Isometry3d flange_home = Eigen::Isometry3d::Identity();
  flange_home.translation() = Vec3(0.0, 0.0, d[0] + d[1] + d[2] + d[3]);
  s.flange = acc * flange_home;
  Eigen::Isometry3d tool = Eigen::Isometry3d::Identity();
  tool.translation() = Vec3(0.0, 0.0, model.tool_offset_mm);
  s.tip = s.flange * tool;
  return s;
}

Pose to_pose(const Eigen::Isometry3d& t) {
  Pose p;
  p.position = t.translation();
  p.orientation = Quat(t.linear()).normalized();
  return p;
}

Jacobian jacobian_from_chain(const ChainState& s) {
  Jacobian jac;
  const Vec3 p_tip = s.tip.translation();
  for (int i = 0; i < kNumJoints; ++i) {
    jac.block<3, 1>(0, i) = s.axis[i].cross(p_tip - s.point[i]);
    jac.block<3, 1>(3, i) = s.axis[i];
  }
  return jac;
}

}  // namespace

ArmModel ArmModel::kuka_like() {
  ArmModel m;
  const std::array<double, kNumJoints> limits_deg{170, 120, 170, 120, 170, 120, 175};
  for (int i = 0; i < kNumJoints; ++i) {
    m.joint_limits[i] = {-limits_deg[i] * kDeg, limits_deg[i] * kDeg};
  }
  return m;
}

void ArmModel::validate() const {
  for (double d : link_offsets_mm) {
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw Error(ErrorCode::kInvalidModel, "link offsets must be positive");
    }
  }
  for (int i = 0; i < kNumJoints; ++i) {
    if (!(joint_limits[i].min < joint_limits[i].max)) {
      throw Error(ErrorCode::kInvalidModel,
                  "joint " + std::to_string(i + 1) + " limits must satisfy min < max");
    }
  }
  if (!(tool_offset_mm >= 0.0) || !std::isfinite(tool_offset_mm)) {
    throw Error(ErrorCode::kInvalidModel, "tool offset must be >= 0");
  }
}

std::array<JointAxis, kNumJoints> ArmModel::joint_axes() const {
  const auto& d = link_offsets_mm;
  const Vec3 z = Vec3::UnitZ();
  const Vec3 y = Vec3::UnitY();
  const Vec3 base(0, 0, 0);
  const Vec3 shoulder(0, 0, d[0]);
  const Vec3 elbow(0, 0, d[0] + d[1]);
  const Vec3 wrist(0, 0, d[0] + d[1] + d[2]);
  return {{{z, base}, {y, shoulder}, {z, shoulder}, {-y, elbow},
           {z, elbow}, {y, wrist}, {z, wrist}}};
}

JointVector ArmModel::limit_midpoints() const {
  JointVector mid;
  for (int i = 0; i < kNumJoints; ++i) {
    mid[i] = 0.5 * (joint_limits[i].min + joint_limits[i].max);
  }
  return mid;
}

bool ArmModel::within_limits(const JointVector& q, double slack) const {
  for (int i = 0; i < kNumJoints; ++i) {
    if (q[i] < joint_limits[i].min - slack || q[i] > joint_limits[i].max + slack) {
      return false;
    }
  }
  return true;
}

JointVector ArmModel::clamp_to_limits(const JointVector& q) const {
  JointVector out;
  for (int i = 0; i < kNumJoints; ++i) {
    out[i] = std::clamp(q[i], joint_limits[i].min, joint_limits[i].max);
  }
  return out;
}

double ArmModel::reach_mm() const {
  return link_offsets_mm[1] + link_offsets_mm[2] + link_offsets_mm[3] + tool_offset_mm;
}

ArmModel arm_model_from_json(const nlohmann::json& j) {
  ArmModel m = ArmModel::kuka_like();
  try {
    if (j.contains("link_offsets_mm")) {
      const auto& v = j.at("link_offsets_mm");
      if (!v.is_array() || v.size() != 4) {
        throw Error(ErrorCode::kBadConfig, "link_offsets_mm must hold 4 numbers");
      }
      for (int i = 0; i < 4; ++i) m.link_offsets_mm[i] = v.at(i).get<double>();
    }
    if (j.contains("joint_limits_deg")) {
      const auto& v = j.at("joint_limits_deg");
      if (!v.is_array() || v.size() != kNumJoints) {
        throw Error(ErrorCode::kBadConfig, "joint_limits_deg must hold 7 [min,max] pairs");
      }
      for (int i = 0; i < kNumJoints; ++i) {
        m.joint_limits[i] = {v.at(i).at(0).get<double>() * kDeg,
                             v.at(i).at(1).get<double>() * kDeg};
      }
    }
    if (j.contains("tool_offset_mm")) m.tool_offset_mm = j.at("tool_offset_mm").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, std::string("arm description: ") + e.what());
  }
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kBadConfig, e.detail());
  }
  return m;
}

nlohmann::json arm_model_to_json(const ArmModel& model) {
  nlohmann::json limits = nlohmann::json::array();
  for (const auto& l : model.joint_limits) {
    limits.push_back({l.min / kDeg, l.max / kDeg});
  }
  return {{"link_offsets_mm", model.link_offsets_mm},
          {"joint_limits_deg", limits},
          {"tool_offset_mm", model.tool_offset_mm}};
}

ArmModel load_arm_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kBadConfig, "cannot open arm description " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, path + ": " + e.what());
  }
  return arm_model_from_json(j);
}

ArmPoses forward_kinematics(const ArmModel& model, const JointVector& q) {
  const ChainState s = evaluate_chain(model, q);
  return {to_pose(s.flange), to_pose(s.tip)};
}

Jacobian jacobian(const ArmModel& model, const JointVector& q) {
  return jacobian_from_chain(evaluate_chain(model, q));
}

double manipulability(const Jacobian& jac) {
  const Eigen::Matrix<double, 6, 6> jjt = jac * jac.transpose();
  return std::sqrt(std::max(0.0, jjt.determinant()));
}

namespace {

struct Attempt {
  std::optional<IkResult> solution;
  JointVector q;
  Vec3 e_pos;
  Vec3 e_rot;
};

Attempt solve_from(const ArmModel& model, const Pose& target, const JointVector& seed,
                   const IkOptions& opts) {
  const Mat3 r_target = target.orientation.normalized().toRotationMatrix();
  const JointVector mid = model.limit_midpoints();

  JointVector q = model.clamp_to_limits(seed);
  Vec3 e_pos;
  Vec3 e_rot;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int it = 0;; ++it) {
    const ChainState s = evaluate_chain(model, q);
    e_pos = target.position - s.tip.translation();
    e_rot = rotation_log(r_target * s.tip.linear().transpose());
    const double pos_err = e_pos.norm();
    const double ori_err = e_rot.norm();
    if (pos_err <= opts.pos_tol_mm && ori_err <= opts.ori_tol_rad) {
      return {IkResult{q, it, pos_err, ori_err}, q, e_pos, e_rot};
    }
    if (it >= opts.max_iterations) break;
    const double merit = pos_err + opts.orientation_weight_mm * ori_err;
    if (merit < best * (1.0 - 1e-6)) {
      best = merit;
      since_best = 0;
    } else if (++since_best >= opts.stall_iterations) {
      break;
    }

    Jacobian jac = jacobian_from_chain(s);
    const double w = manipulability(jac);
    jac.bottomRows<3>() *= opts.orientation_weight_mm;
    double lambda = opts.lambda_base;
    if (w < opts.manipulability_threshold) {
      const double r = 1.0 - w / opts.manipulability_threshold;
      lambda += (opts.lambda_max - opts.lambda_base) * r * r;
    }
    Eigen::Matrix<double, 6, 1> err;
    err << e_pos, opts.orientation_weight_mm * e_rot;

    // Joints resting on a limit that the step would push further out are frozen
    // and the step is recomputed on the remaining columns.
    JointVector dq;
    std::array<bool, kNumJoints> frozen{};
    for (int pass = 0; pass < kNumJoints; ++pass) {
      Jacobian active = jac;
      for (int i = 0; i < kNumJoints; ++i) {
        if (frozen[i]) active.col(i).setZero();
      }
      Eigen::Matrix<double, 6, 6> damped = active * active.transpose();
      damped.diagonal().array() += lambda * lambda;
      dq = active.transpose() * damped.ldlt().solve(err);
      bool changed = false;
      for (int i = 0; i < kNumJoints; ++i) {
        const auto& l = model.joint_limits[i];
        const bool pushing_out = (q[i] <= l.min && dq[i] < 0.0) || (q[i] >= l.max && dq[i] > 0.0);
        if (!frozen[i] && pushing_out) {
          frozen[i] = true;
          changed = true;
        }
      }
      if (!changed) break;
    }

    // Redundancy bias only while far from the target; it is switched off for the
    // final approach so that second-order drift cannot stall convergence.
    if (pos_err > 100.0 * opts.pos_tol_mm || ori_err > 100.0 * opts.ori_tol_rad) {
      Eigen::JacobiSVD<Jacobian> svd(jac, Eigen::ComputeFullV);
      const auto& sv = svd.singularValues();
      const double cutoff = 1e-9 * std::max(sv[0], 1.0);
      Eigen::Matrix<double, kNumJoints, kNumJoints> null_proj =
          Eigen::Matrix<double, kNumJoints, kNumJoints>::Zero();
      for (int k = 0; k < kNumJoints; ++k) {
        if (k >= sv.size() || sv[k] < cutoff) {
          const auto v = svd.matrixV().col(k);
          null_proj += v * v.transpose();
        }
      }
      dq += opts.nullspace_gain * null_proj * (mid - q);
    }

    const double largest = dq.cwiseAbs().maxCoeff();
    if (largest > opts.max_step_rad) dq *= opts.max_step_rad / largest;
    q = model.clamp_to_limits(q + dq);
  }

  return {std::nullopt, q, e_pos, e_rot};
}

// Deterministic restart seed in [min, max] per joint (splitmix64 stream).
JointVector restart_seed(const ArmModel& model, std::uint64_t index) {
  std::uint64_t state = 0x9E3779B97F4A7C15ull * (index + 1);
  JointVector q;
  for (int i = 0; i < kNumJoints; ++i) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    const double u = static_cast<double>(z >> 11) * 0x1.0p-53;
    const auto& l = model.joint_limits[i];
    q[i] = l.min + u * (l.max - l.min);
  }
  return q;
}

}  // namespace

IkResult inverse_kinematics(const ArmModel& model, const Pose& target,
                            const JointVector& seed, const IkOptions& opts) {
  if (!target.position.allFinite() || !target.orientation.coeffs().allFinite()) {
    throw Error(ErrorCode::kNonFinite, "IK target contains non-finite values");
  }
  if (!seed.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "IK seed contains non-finite values");
  }
  Attempt attempt = solve_from(model, target, seed, opts);
  const double dist = (target.position - model.shoulder_mm()).norm();
  // Restarts only make sense inside the reachable sphere.
  if (!attempt.solution && dist <= model.reach_mm()) {
    for (int k = 0; k <= opts.restarts && !attempt.solution; ++k) {
      const JointVector s = k == 0 ? model.limit_midpoints() : restart_seed(model, k);
      Attempt next = solve_from(model, target, s, opts);
      if (next.solution || next.e_pos.norm() < attempt.e_pos.norm()) attempt = next;
    }
  }
  if (attempt.solution) return *attempt.solution;

  const JointVector& q = attempt.q;
  bool saturated = false;
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& l = model.joint_limits[i];
    saturated = saturated || q[i] <= l.min + 1e-9 || q[i] >= l.max - 1e-9;
  }
  if (dist <= model.reach_mm() && saturated) {
    throw Error(ErrorCode::kOutOfLimits, "no limit-feasible solution; residual " +
                                             std::to_string(attempt.e_pos.norm()) + " mm");
  }
  throw Error(ErrorCode::kNotConverged,
              "residual " + std::to_string(attempt.e_pos.norm()) + " mm / " +
                  std::to_string(attempt.e_rot.norm()) + " rad");
}

}  // namespace teleop
