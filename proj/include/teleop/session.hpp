#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "teleop/calibration.hpp"
#include "teleop/error.hpp"
#include "teleop/kinematics.hpp"
#include "teleop/protocol.hpp"
#include "teleop/types.hpp"

namespace teleop {

using ClientId = std::uint64_t;

enum class Phase { kAwaitHello, kIdle, kEngaged, kAwaitValidation };
enum class Mode { kFreeSpace, kApproach, kInserted };

std::string_view to_string(Phase phase);
std::string_view to_string(Mode mode);

struct SessionConfig {
  double scale = 1.0;  // [0.05, 10]
  double insert_increment_mm = 1.0;
  double insert_velocity_mm_s = 2.0;
  double standoff_mm = 20.0;
  double max_insert_depth_mm = 100.0;
  double waypoint_spacing_mm = 1.0;
  double waypoint_angle_rad = 0.5 * 3.14159265358979323846 / 180.0;
  // Consecutive IK failures before the engaged client is told.
  int ik_failure_threshold = 10;
  // Insertion waypoints are spaced one simulator tick apart.
  double tick_rate_hz = 100.0;
  IkOptions ik;
};

// Camera parameterization around a fixed insertion point. Angles and the
// shaft direction live in the trocar frame, whose rotation into the base frame
// is `frame`:  u = Ry(theta_y) * Rx(theta_x) * e_z,  tip = trocar + depth * u.
struct TrocarState {
  Vec3 trocar_mm = Vec3::Zero();
  Mat3 frame = Mat3::Identity();
  double theta_x = 0.0;
  double theta_y = 0.0;
  double depth_mm = 0.0;

  // Shaft direction in the trocar frame.
  Vec3 local_direction() const;
  // Shaft direction in the base frame.
  Vec3 direction() const { return frame * local_direction(); }
  Vec3 tip_mm() const { return trocar_mm + depth_mm * direction(); }
};

// Re-aims the camera so that its tip lands on `desired_tip_mm` while the shaft
// keeps passing through the trocar. Throws DegenerateDirection when the desired
// tip is within 1 mm of the trocar point.
TrocarState rcm_constrain(const TrocarState& trocar, const Vec3& desired_tip_mm);

// Distance from `point` to the camera shaft line through the flange and tip.
double shaft_line_distance(const ArmPoses& poses, const Vec3& point);

// Orientation whose z-axis is `axis`, obtained by the smallest rotation of `reference`.
Quat align_z_axis(const Quat& reference, const Vec3& axis);

struct Anchor {
  std::optional<Vec3> operator_point_mm;  // set by the first sample of the pinch
  Pose tip;
  JointVector joints;
  TrocarState trocar;
};

struct ClientMessage {
  ClientId client = 0;
  WireMessage msg;
};

// Simulator heartbeat: the current configuration, and whether a trajectory or
// homing motion is still being executed.
struct Tick {
  JointVector q;
  bool motion_pending = false;
};

struct Disconnect {
  ClientId client = 0;
};

using SessionEvent = std::variant<ClientMessage, Tick, Disconnect>;

struct RobotCommand {
  enum class Kind {
    kStream,      // latest-wins teleoperation target
    kTrajectory,  // one waypoint per simulator tick
    kHome,        // single target, tracked until reached
  };
  Kind kind = Kind::kStream;
  std::vector<JointVector> waypoints;
};

struct Outbound {
  std::optional<ClientId> to;  // nullopt: every admitted client
  WireMessage msg;
};

struct SessionOutput {
  std::vector<RobotCommand> commands;
  std::vector<Outbound> replies;
  // Pre-IK commanded tip position of a processed wrist sample.
  std::optional<Vec3> commanded_tip_mm;
};

struct SessionCounters {
  std::uint64_t gating_violations = 0;
  std::uint64_t ik_skips = 0;
  std::uint64_t stream_commands = 0;
  std::uint64_t moves = 0;
};

// Run-to-completion state machine over one totally ordered event stream. It is
// the only producer of robot commands.
class Session {
 public:
  Session(ArmModel model, RigidTransform calibration, SessionConfig config,
          const JointVector& initial_q);

  SessionOutput handle(const SessionEvent& event);

  // Pre-IK part of the motion pipeline: normalize, transform, scale around the
  // anchor. Requires an engaged anchor with an operator point.
  Vec3 scaled_target(const Vec3& operator_point_mm) const;

  // Straight-line approach to the insertion point: current tip to the standoff
  // point while aligning the camera with `approach_dir`, then along the axis to
  // the trocar point. Waypoints are IK solutions seeded from `from_q`.
  // Throws Unreachable.
  std::vector<JointVector> plan_approach(const JointVector& from_q, const Vec3& trocar_mm,
                                         const Vec3& approach_dir) const;
  // Waypoints for one insertion increment from `from_q` and the updated depth.
  // Throws DepthLimit or Unreachable.
  std::pair<std::vector<JointVector>, double> plan_insertion(const JointVector& from_q,
                                                             bool inward) const;

  // The executor dropped the rest of a requested trajectory; mode and depth
  // are brought back in line with the configuration actually reached.
  void motion_aborted(const JointVector& q);

  Phase phase() const { return phase_; }
  Mode mode() const { return mode_; }
  const SessionConfig& config() const { return config_; }
  const std::optional<Anchor>& anchor() const { return anchor_; }
  const TrocarState& trocar() const { return trocar_; }
  const SessionCounters& counters() const { return counters_; }
  const std::optional<MoveSummary>& pending_move() const { return pending_; }
  std::optional<ClientId> engaged_client() const { return engaged_; }
  std::optional<std::string> engaged_client_name() const;
  bool admitted(ClientId c) const { return clients_.contains(c); }
  const JointVector& observed_q() const { return observed_q_; }
  const ArmModel& model() const { return model_; }
  const RigidTransform& calibration() const { return calibration_; }

 private:
  struct ClientInfo {
    std::string name;
    PinchGate gate;
  };

  SessionOutput on_message(ClientId client, const WireMessage& msg);
  SessionOutput on_tick(const Tick& tick);
  SessionOutput on_disconnect(ClientId client);

  void on_pinch_start(ClientId client, SessionOutput& out);
  void on_wrist(ClientId client, const WristSample& sample, SessionOutput& out);
  void on_pinch_end(ClientId client, SessionOutput& out);
  void on_validate(ClientId client, const Validate& v, SessionOutput& out);
  void on_config(ClientId client, const ConfigSet& c, SessionOutput& out);
  void return_to_anchor(SessionOutput& out);
  void release_engagement();

  Pose sample_pose(const Vec3& target_mm) const;
  static void reply_error(SessionOutput& out, ClientId to, ErrorCode code,
                          const std::string& detail);

  ArmModel model_;
  RigidTransform calibration_;
  SessionConfig config_;

  Phase phase_ = Phase::kAwaitHello;
  Mode mode_ = Mode::kFreeSpace;
  std::map<ClientId, ClientInfo> clients_;
  std::optional<ClientId> engaged_;
  std::optional<Anchor> anchor_;
  std::optional<MoveSummary> pending_;
  TrocarState trocar_;
  JointVector observed_q_;
  JointVector commanded_q_;
  bool motion_pending_ = false;
  std::uint64_t window_samples_ = 0;
  int consecutive_ik_failures_ = 0;
  std::uint64_t next_move_id_ = 1;
  std::uint64_t next_session_serial_ = 1;
  SessionCounters counters_;
};

}  // namespace teleop
