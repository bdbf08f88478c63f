#include "teleop/session.hpp"

#include <algorithm>
#include <cmath>

namespace teleop {

namespace {

std::array<double, 3> to_array(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 to_vec(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

constexpr double kAlignedTolRad = 1e-6;
constexpr double kPositionTolMm = 1e-6;

}  // namespace

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::kAwaitHello: return "await_hello";
    case Phase::kIdle: return "idle";
    case Phase::kEngaged: return "engaged";
    case Phase::kAwaitValidation: return "await_validation";
  }
  return "unknown";
}

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::kFreeSpace: return "free_space";
    case Mode::kApproach: return "approach";
    case Mode::kInserted: return "inserted";
  }
  return "unknown";
}

Vec3 TrocarState::local_direction() const {
  return {std::sin(theta_y) * std::cos(theta_x), -std::sin(theta_x),
          std::cos(theta_y) * std::cos(theta_x)};
}

TrocarState rcm_constrain(const TrocarState& trocar, const Vec3& desired_tip_mm) {
  const Vec3 v = trocar.frame.transpose() * (desired_tip_mm - trocar.trocar_mm);
  const double d = v.norm();
  if (!std::isfinite(d)) throw Error(ErrorCode::kNonFinite, "desired tip is not finite");
  if (d < 1.0) {
    throw Error(ErrorCode::kDegenerateDirection, "desired tip within 1 mm of the trocar point");
  }
  const Vec3 u = v / d;
  TrocarState out = trocar;
  // atan2 form of asin(-u_y); better conditioned near the poles
  out.theta_x = std::atan2(-u.y(), std::hypot(u.x(), u.z()));
  out.theta_y = std::atan2(u.x(), u.z());
  out.depth_mm = d;
  return out;
}

double shaft_line_distance(const ArmPoses& poses, const Vec3& point) {
  const Vec3 axis = poses.tip.orientation * Vec3::UnitZ();
  const Vec3 r = point - poses.tip.position;
  return (r - r.dot(axis) * axis).norm();
}

Quat align_z_axis(const Quat& reference, const Vec3& axis) {
  const Vec3 z = reference * Vec3::UnitZ();
  return (Quat::FromTwoVectors(z, axis.normalized()) * reference).normalized();
}

Session::Session(ArmModel model, RigidTransform calibration, SessionConfig config,
                 const JointVector& initial_q)
    : model_(std::move(model)),
      calibration_(calibration),
      config_(std::move(config)),
      observed_q_(initial_q),
      commanded_q_(initial_q) {
  model_.validate();
  if (!(config_.scale >= 0.05 && config_.scale <= 10.0)) {
    throw Error(ErrorCode::kBadConfig, "scale outside [0.05, 10]");
  }
  if (!(config_.insert_increment_mm > 0.0) || !(config_.insert_velocity_mm_s > 0.0) ||
      !(config_.standoff_mm >= 0.0) || !(config_.max_insert_depth_mm > 0.0) ||
      !(config_.waypoint_spacing_mm > 0.0) || !(config_.tick_rate_hz > 0.0)) {
    throw Error(ErrorCode::kBadConfig, "session tuning values must be positive");
  }
}

std::optional<std::string> Session::engaged_client_name() const {
  if (!engaged_) return std::nullopt;
  auto it = clients_.find(*engaged_);
  if (it == clients_.end()) return std::nullopt;
  return it->second.name;
}

SessionOutput Session::handle(const SessionEvent& event) {
  return std::visit(
      [this](const auto& e) -> SessionOutput {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, ClientMessage>) {
          return on_message(e.client, e.msg);
        } else if constexpr (std::is_same_v<T, Tick>) {
          return on_tick(e);
        } else {
          return on_disconnect(e.client);
        }
      },
      event);
}

void Session::reply_error(SessionOutput& out, ClientId to, ErrorCode code,
                          const std::string& detail) {
  out.replies.push_back({to, ErrorMsg{std::string(to_string(code)), detail}});
}

SessionOutput Session::on_message(ClientId client, const WireMessage& msg) {
  SessionOutput out;
  if (const auto* hello = std::get_if<Hello>(&msg)) {
    if (clients_.contains(client)) {
      reply_error(out, client, ErrorCode::kProtocolViolation, "duplicate Hello");
      return out;
    }
    clients_.emplace(client, ClientInfo{hello->client_id, {}});
    if (phase_ == Phase::kAwaitHello) phase_ = Phase::kIdle;
    out.replies.push_back(
        {client, HelloAck{"session-" + std::to_string(next_session_serial_++), kServerVersion}});
    return out;
  }
  if (!clients_.contains(client)) {
    reply_error(out, client, ErrorCode::kProtocolViolation, "Hello required first");
    return out;
  }
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, PinchStart>) {
          on_pinch_start(client, out);
        } else if constexpr (std::is_same_v<T, WristSample>) {
          on_wrist(client, m, out);
        } else if constexpr (std::is_same_v<T, PinchEnd>) {
          on_pinch_end(client, out);
        } else if constexpr (std::is_same_v<T, Validate>) {
          on_validate(client, m, out);
        } else if constexpr (std::is_same_v<T, ConfigSet>) {
          on_config(client, m, out);
        } else {
          reply_error(out, client, ErrorCode::kProtocolViolation,
                      std::string(type_tag(msg)) + " is server-to-client only");
        }
      },
      msg);
  return out;
}

void Session::on_pinch_start(ClientId client, SessionOutput& out) {
  if (engaged_ && *engaged_ != client) {
    reply_error(out, client, ErrorCode::kBusy, "another client is engaged");
    return;
  }
  if (phase_ != Phase::kIdle) {
    ++counters_.gating_violations;
    reply_error(out, client, ErrorCode::kProtocolViolation,
                std::string("PinchStart in phase ") + std::string(to_string(phase_)));
    return;
  }
  if (motion_pending_ || mode_ == Mode::kApproach) {
    reply_error(out, client, ErrorCode::kBusy, "robot is executing a trajectory");
    return;
  }
  auto& gate = clients_.at(client).gate;
  if (gate.observe(PinchStart{}) != PinchGate::Verdict::kPass) {
    gate = PinchGate{};
    gate.observe(PinchStart{});
  }
  const ArmPoses poses = forward_kinematics(model_, observed_q_);
  anchor_ = Anchor{std::nullopt, poses.tip, observed_q_, trocar_};
  commanded_q_ = observed_q_;
  engaged_ = client;
  phase_ = Phase::kEngaged;
  window_samples_ = 0;
  consecutive_ik_failures_ = 0;
}

Vec3 Session::scaled_target(const Vec3& operator_point_mm) const {
  return anchor_->tip.position + config_.scale * (operator_point_mm - *anchor_->operator_point_mm);
}

Pose Session::sample_pose(const Vec3& target_mm) const {
  if (mode_ == Mode::kInserted) {
    TrocarState t = rcm_constrain(trocar_, target_mm);
    t.depth_mm = trocar_.depth_mm;  // drags re-aim the shaft; depth changes only by increments
    return {t.tip_mm(), align_z_axis(anchor_->tip.orientation, t.direction())};
  }
  return {target_mm, anchor_->tip.orientation};
}

void Session::on_wrist(ClientId client, const WristSample& sample, SessionOutput& out) {
  auto& gate = clients_.at(client).gate;
  const auto verdict = gate.observe(sample);
  if (verdict != PinchGate::Verdict::kPass || phase_ != Phase::kEngaged || engaged_ != client) {
    ++counters_.gating_violations;
    return;
  }
  ++window_samples_;
  const Vec3 p = apply_transform(calibration_,
                                 meters_to_millimeters(Vec3(sample.x_m, sample.y_m, sample.z_m)));
  if (!p.allFinite()) {
    ++counters_.ik_skips;
    return;
  }
  if (!anchor_->operator_point_mm) anchor_->operator_point_mm = p;
  const Vec3 target = scaled_target(p);
  out.commanded_tip_mm = target;

  try {
    const Pose pose = sample_pose(target);
    const IkResult ik = inverse_kinematics(model_, pose, commanded_q_, config_.ik);
    commanded_q_ = ik.q;
    if (mode_ == Mode::kInserted) {
      const double depth = trocar_.depth_mm;
      trocar_ = rcm_constrain(trocar_, target);
      trocar_.depth_mm = depth;
    }
    consecutive_ik_failures_ = 0;
    ++counters_.stream_commands;
    out.commands.push_back({RobotCommand::Kind::kStream, {ik.q}});
  } catch (const Error& e) {
    ++counters_.ik_skips;
    if (++consecutive_ik_failures_ >= config_.ik_failure_threshold) {
      consecutive_ik_failures_ = 0;
      reply_error(out, client, ErrorCode::kIkFailure,
                  std::to_string(config_.ik_failure_threshold) +
                      " consecutive samples skipped; last: " + e.what());
    }
  }
}

void Session::on_pinch_end(ClientId client, SessionOutput& out) {
  auto& gate = clients_.at(client).gate;
  const auto verdict = gate.observe(PinchEnd{});
  if (verdict != PinchGate::Verdict::kPass || phase_ != Phase::kEngaged || engaged_ != client) {
    ++counters_.gating_violations;
    reply_error(out, client, ErrorCode::kNotEngaged, "PinchEnd without an active pinch");
    return;
  }
  const ArmPoses end = forward_kinematics(model_, commanded_q_);
  MoveSummary summary{next_move_id_++, window_samples_, to_array(anchor_->tip.position),
                      to_array(end.tip.position)};
  pending_ = summary;
  phase_ = Phase::kAwaitValidation;
  ++counters_.moves;
  out.replies.push_back({client, summary});
}

void Session::on_validate(ClientId client, const Validate& v, SessionOutput& out) {
  if (phase_ != Phase::kAwaitValidation || !pending_) {
    reply_error(out, client, ErrorCode::kStaleValidation, "no move awaiting validation");
    return;
  }
  if (engaged_ != client) {
    reply_error(out, client, ErrorCode::kNotEngaged, "move belongs to another client");
    return;
  }
  if (v.move_id != pending_->move_id) {
    reply_error(out, client, ErrorCode::kStaleValidation,
                "expected move_id " + std::to_string(pending_->move_id) + ", got " +
                    std::to_string(v.move_id));
    return;
  }
  if (!v.accepted) return_to_anchor(out);
  release_engagement();
}

void Session::return_to_anchor(SessionOutput& out) {
  out.commands.push_back({RobotCommand::Kind::kHome, {anchor_->joints}});
  commanded_q_ = anchor_->joints;
  trocar_ = anchor_->trocar;
  motion_pending_ = true;
}

void Session::release_engagement() {
  engaged_.reset();
  anchor_.reset();
  pending_.reset();
  window_samples_ = 0;
  phase_ = clients_.empty() ? Phase::kAwaitHello : Phase::kIdle;
}

void Session::on_config(ClientId client, const ConfigSet& c, SessionOutput& out) {
  if (phase_ != Phase::kIdle) {
    reply_error(out, client, ErrorCode::kBusy, "ConfigSet is accepted only while idle");
    return;
  }
  const int ops = static_cast<int>(c.approach_trocar_mm.has_value()) +
                  static_cast<int>(c.insert.has_value()) + static_cast<int>(c.mode.has_value());
  if (ops > 1) {
    reply_error(out, client, ErrorCode::kProtocolViolation, "at most one mode operation per ConfigSet");
    return;
  }
  if (c.approach_dir && !c.approach_trocar_mm) {
    reply_error(out, client, ErrorCode::kProtocolViolation, "approach_dir without approach_trocar_mm");
    return;
  }
  if (c.scale && !(*c.scale >= 0.05 && *c.scale <= 10.0)) {
    reply_error(out, client, ErrorCode::kBadConfig, "scale outside [0.05, 10]");
    return;
  }
  if ((c.insert_increment_mm && !(*c.insert_increment_mm > 0.0)) ||
      (c.insert_velocity_mm_s && !(*c.insert_velocity_mm_s > 0.0)) ||
      (c.standoff_mm && !(*c.standoff_mm >= 0.0))) {
    reply_error(out, client, ErrorCode::kBadConfig, "tuning values must be positive");
    return;
  }
  if (c.scale) config_.scale = *c.scale;
  if (c.insert_increment_mm) config_.insert_increment_mm = *c.insert_increment_mm;
  if (c.insert_velocity_mm_s) config_.insert_velocity_mm_s = *c.insert_velocity_mm_s;
  if (c.standoff_mm) config_.standoff_mm = *c.standoff_mm;
  if (ops == 0) return;

  if (motion_pending_ || mode_ == Mode::kApproach) {
    reply_error(out, client, ErrorCode::kBusy, "robot is executing a trajectory");
    return;
  }

  try {
    if (c.approach_trocar_mm) {
      if (mode_ != Mode::kFreeSpace) {
        throw Error(ErrorCode::kWrongMode, "approach requires free_space mode");
      }
      const Vec3 trocar = to_vec(*c.approach_trocar_mm);
      const Vec3 dir = c.approach_dir ? to_vec(*c.approach_dir) : Vec3(0.0, 0.0, -1.0);
      if (!trocar.allFinite() || !dir.allFinite() || dir.norm() < 1e-9) {
        throw Error(ErrorCode::kBadConfig, "invalid trocar point or approach direction");
      }
      auto waypoints = plan_approach(observed_q_, trocar, dir);
      TrocarState t;
      t.trocar_mm = trocar;
      t.frame = Quat::FromTwoVectors(Vec3::UnitZ(), dir.normalized()).toRotationMatrix();
      trocar_ = t;
      if (waypoints.empty()) {
        mode_ = Mode::kInserted;
      } else {
        commanded_q_ = waypoints.back();
        mode_ = Mode::kApproach;
        motion_pending_ = true;
        out.commands.push_back({RobotCommand::Kind::kTrajectory, std::move(waypoints)});
      }
    } else if (c.insert) {
      if (*c.insert != "in" && *c.insert != "out") {
        throw Error(ErrorCode::kBadConfig, "insert must be \"in\" or \"out\"");
      }
      if (mode_ != Mode::kInserted) {
        throw Error(ErrorCode::kWrongMode, "insertion requires inserted mode");
      }
      auto [waypoints, depth] = plan_insertion(observed_q_, *c.insert == "in");
      trocar_.depth_mm = depth;
      commanded_q_ = waypoints.back();
      motion_pending_ = true;
      out.commands.push_back({RobotCommand::Kind::kTrajectory, std::move(waypoints)});
    } else {
      if (*c.mode != "free_space") {
        throw Error(ErrorCode::kBadConfig, "mode can only be set to \"free_space\"");
      }
      if (mode_ == Mode::kInserted && trocar_.depth_mm > 0.0) {
        throw Error(ErrorCode::kDepthLimit, "retract to depth 0 before leaving the trocar");
      }
      mode_ = Mode::kFreeSpace;
    }
  } catch (const Error& e) {
    reply_error(out, client, e.code(), e.detail());
  }
}

std::vector<JointVector> Session::plan_approach(const JointVector& from_q, const Vec3& trocar_mm,
                                                const Vec3& approach_dir) const {
  const Vec3 u0 = approach_dir.normalized();
  const Pose start = forward_kinematics(model_, from_q).tip;
  const Vec3 standoff = trocar_mm - config_.standoff_mm * u0;
  const Quat aligned = align_z_axis(start.orientation, u0);

  if ((trocar_mm - model_.shoulder_mm()).norm() > model_.reach_mm() ||
      (standoff - model_.shoulder_mm()).norm() > model_.reach_mm()) {
    throw Error(ErrorCode::kUnreachable, "trocar point outside the arm's reach");
  }

  // Slightly tighter than the nominal spacing so that IK residuals cannot
  // push consecutive tips past it.
  const double spacing = 0.99 * config_.waypoint_spacing_mm;
  std::vector<JointVector> out;
  JointVector seed = from_q;
  auto solve = [&](const Pose& pose, std::size_t index) {
    try {
      seed = inverse_kinematics(model_, pose, seed, config_.ik).q;
    } catch (const Error& e) {
      throw Error(ErrorCode::kUnreachable,
                  "approach waypoint " + std::to_string(index) + ": " + e.what());
    }
    out.push_back(seed);
  };

  const double dist1 = (standoff - start.position).norm();
  const double angle1 = start.orientation.angularDistance(aligned);
  // Already aligned and on the axis between standoff and trocar: only the
  // axial remainder is left.
  const Vec3 rel = trocar_mm - start.position;
  const double along = rel.dot(u0);
  const bool on_axis = angle1 <= kAlignedTolRad && (rel - along * u0).norm() <= kPositionTolMm &&
                       along >= -kPositionTolMm && along <= config_.standoff_mm + kPositionTolMm;
  int n1 = 0;
  if (!on_axis && (dist1 > kPositionTolMm || angle1 > kAlignedTolRad)) {
    n1 = std::max({1, static_cast<int>(std::ceil(dist1 / spacing)),
                   static_cast<int>(std::ceil(angle1 / config_.waypoint_angle_rad))});
  }
  for (int k = 1; k <= n1; ++k) {
    const double s = static_cast<double>(k) / n1;
    solve({start.position + s * (standoff - start.position), start.orientation.slerp(s, aligned)},
          out.size());
  }

  const double dist2 = (trocar_mm - standoff).norm();
  const Vec3 from2 = n1 > 0 ? standoff : start.position;
  if ((trocar_mm - from2).norm() > kPositionTolMm) {
    const int n2 = std::max(1, static_cast<int>(std::ceil(dist2 / spacing)));
    for (int k = 1; k <= n2; ++k) {
      const double s = static_cast<double>(k) / n2;
      solve({from2 + s * (trocar_mm - from2), aligned}, out.size());
    }
  }
  return out;
}

std::pair<std::vector<JointVector>, double> Session::plan_insertion(const JointVector& from_q,
                                                                    bool inward) const {
  const double d0 = trocar_.depth_mm;
  const double step = inward ? config_.insert_increment_mm : -config_.insert_increment_mm;
  const double d1 = std::clamp(d0 + step, 0.0, config_.max_insert_depth_mm);
  if (std::abs(d1 - d0) < 1e-12) {
    throw Error(ErrorCode::kDepthLimit, "depth already at " + std::to_string(d0) + " mm");
  }
  const Vec3 u = trocar_.direction();
  const Quat orientation = align_z_axis(forward_kinematics(model_, from_q).tip.orientation, u);
  const double per_tick = config_.insert_velocity_mm_s / config_.tick_rate_hz;
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(d1 - d0) / per_tick - 1e-9)));

  std::vector<JointVector> out;
  out.reserve(static_cast<std::size_t>(n));
  JointVector seed = from_q;
  for (int k = 1; k <= n; ++k) {
    const double depth = d0 + (d1 - d0) * k / n;
    try {
      seed = inverse_kinematics(model_, {trocar_.trocar_mm + depth * u, orientation}, seed,
                                config_.ik)
                 .q;
    } catch (const Error& e) {
      throw Error(ErrorCode::kUnreachable,
                  "insertion depth " + std::to_string(depth) + " mm: " + e.what());
    }
    out.push_back(seed);
  }
  return {std::move(out), d1};
}

void Session::motion_aborted(const JointVector& q) {
  observed_q_ = q;
  commanded_q_ = q;
  if (mode_ == Mode::kApproach) {
    mode_ = Mode::kFreeSpace;
  } else if (mode_ == Mode::kInserted) {
    const Vec3 tip = forward_kinematics(model_, q).tip.position;
    trocar_.depth_mm = std::clamp((tip - trocar_.trocar_mm).dot(trocar_.direction()), 0.0,
                                  config_.max_insert_depth_mm);
  }
}

SessionOutput Session::on_tick(const Tick& tick) {
  observed_q_ = tick.q;
  motion_pending_ = tick.motion_pending;
  if (mode_ == Mode::kApproach && !motion_pending_) mode_ = Mode::kInserted;
  return {};
}

SessionOutput Session::on_disconnect(ClientId client) {
  SessionOutput out;
  if (!clients_.erase(client)) return out;
  if (engaged_ == client) {
    // an abandoned move is treated as rejected
    return_to_anchor(out);
    release_engagement();
  } else if (clients_.empty() && phase_ == Phase::kIdle) {
    phase_ = Phase::kAwaitHello;
  }
  return out;
}

}  // namespace teleop
