#include "teleop/config.hpp"

#include <filesystem>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

namespace teleop {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Vec3 vec3_at(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 3) {
    throw Error(ErrorCode::kBadConfig, std::string(key) + " must hold 3 numbers");
  }
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

}  // namespace

JointVector TeleopConfig::default_home() {
  JointVector q;
  q << 0.0, 20.0, 0.0, -100.0, 0.0, 60.0, 0.0;
  return q * kDeg;
}

TeleopConfig config_from_json(const nlohmann::json& j, const std::string& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::kBadConfig, "config must be a JSON object");
  TeleopConfig c;
  try {
    if (j.contains("arm")) c.arm = arm_model_from_json(j.at("arm"));
    if (j.contains("arm_file")) {
      std::filesystem::path p = j.at("arm_file").get<std::string>();
      if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
      c.arm = load_arm_model(p.string());
    }
    if (j.contains("home_joints_deg")) {
      const auto& v = j.at("home_joints_deg");
      if (!v.is_array() || v.size() != kNumJoints) {
        throw Error(ErrorCode::kBadConfig, "home_joints_deg must hold 7 numbers");
      }
      for (int i = 0; i < kNumJoints; ++i) c.home[i] = v[i].get<double>() * kDeg;
    }
    auto number = [&](const char* key, double& dst) {
      if (j.contains(key)) dst = j.at(key).get<double>();
    };
    number("scale", c.session.scale);
    number("insert_increment_mm", c.session.insert_increment_mm);
    number("insert_velocity_mm_s", c.session.insert_velocity_mm_s);
    number("standoff_mm", c.session.standoff_mm);
    number("max_insert_depth_mm", c.session.max_insert_depth_mm);
    number("tick_rate_hz", c.sim.tick_rate_hz);
    number("vel_limit_rad_s", c.sim.vel_limit_rad_s);
    if (j.contains("safety_box_mm")) {
      const auto& b = j.at("safety_box_mm");
      c.sim.safety_box.min_mm = vec3_at(b, "min");
      c.sim.safety_box.max_mm = vec3_at(b, "max");
    }
    if (j.contains("joint_planes_deg")) {
      const auto& v = j.at("joint_planes_deg");
      if (!v.is_array() || v.size() != kNumJoints) {
        throw Error(ErrorCode::kBadConfig, "joint_planes_deg must hold 7 [min,max] pairs");
      }
      std::array<JointLimit, kNumJoints> planes{};
      for (int i = 0; i < kNumJoints; ++i) {
        planes[i] = {v[i].at(0).get<double>() * kDeg, v[i].at(1).get<double>() * kDeg};
      }
      c.sim.joint_planes = planes;
    }
    if (j.contains("handshake_timeout_ms")) {
      c.handshake_timeout_ms = j.at("handshake_timeout_ms").get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, e.what());
  }
  if (!(c.sim.tick_rate_hz > 0.0) || !(c.sim.vel_limit_rad_s > 0.0)) {
    throw Error(ErrorCode::kBadConfig, "tick_rate_hz and vel_limit_rad_s must be positive");
  }
  if (!(c.session.scale >= 0.05 && c.session.scale <= 10.0)) {
    throw Error(ErrorCode::kBadConfig, "scale outside [0.05, 10]");
  }
  if (!(c.session.insert_increment_mm > 0.0) || !(c.session.insert_velocity_mm_s > 0.0) ||
      !(c.session.standoff_mm > 0.0) || !(c.session.max_insert_depth_mm > 0.0)) {
    throw Error(ErrorCode::kBadConfig, "insertion and standoff settings must be positive");
  }
  if (c.handshake_timeout_ms <= 0) {
    throw Error(ErrorCode::kBadConfig, "handshake_timeout_ms must be positive");
  }
  c.session.tick_rate_hz = c.sim.tick_rate_hz;
  return c;
}

nlohmann::json config_to_json(const TeleopConfig& c) {
  nlohmann::json home = nlohmann::json::array();
  for (int i = 0; i < kNumJoints; ++i) home.push_back(c.home[i] / kDeg);
  nlohmann::json j = {
      {"arm", arm_model_to_json(c.arm)},
      {"home_joints_deg", home},
      {"scale", c.session.scale},
      {"insert_increment_mm", c.session.insert_increment_mm},
      {"insert_velocity_mm_s", c.session.insert_velocity_mm_s},
      {"standoff_mm", c.session.standoff_mm},
      {"max_insert_depth_mm", c.session.max_insert_depth_mm},
      {"tick_rate_hz", c.sim.tick_rate_hz},
      {"vel_limit_rad_s", c.sim.vel_limit_rad_s},
      {"safety_box_mm",
       {{"min", {c.sim.safety_box.min_mm.x(), c.sim.safety_box.min_mm.y(), c.sim.safety_box.min_mm.z()}},
        {"max", {c.sim.safety_box.max_mm.x(), c.sim.safety_box.max_mm.y(), c.sim.safety_box.max_mm.z()}}}},
      {"handshake_timeout_ms", c.handshake_timeout_ms},
  };
  if (c.sim.joint_planes) {
    nlohmann::json planes = nlohmann::json::array();
    for (const auto& l : *c.sim.joint_planes) planes.push_back({l.min / kDeg, l.max / kDeg});
    j["joint_planes_deg"] = planes;
  }
  return j;
}

TeleopConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kBadConfig, "cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, path + ": " + e.what());
  }
  return config_from_json(j, std::filesystem::path(path).parent_path().string());
}

}  // namespace teleop
