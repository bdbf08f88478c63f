#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <string_view>
#include <vector>

#include "teleop/calibration.hpp"
#include "teleop/config.hpp"
#include "teleop/metrics.hpp"
#include "teleop/robot_sim.hpp"
#include "teleop/session.hpp"

namespace teleop {

// Session, simulator and trajectory queue behind one serialized entry point.
// Not thread-safe; the transport funnels every event through a single thread.
class Runtime {
 public:
  Runtime(const TeleopConfig& config, const RigidTransform& calibration,
          bool record_traces = false);

  ClientId connect() { return next_client_++; }
  std::vector<Outbound> disconnect(ClientId client);

  std::vector<Outbound> deliver(ClientId client, const WireMessage& msg);
  // Decodes one frame and delivers it. Decode failures come back as an Error
  // reply, except MalformedJson, which is rethrown so the transport can close.
  // Frames that produce a motion command log a wall-clock latency pair.
  std::vector<Outbound> deliver_frame(ClientId client, std::string_view frame);

  // Feeds the next trajectory waypoint, steps the simulator and reports the
  // new state to the session.
  StateBroadcast tick();
  // Ticks until no trajectory or homing is pending and the simulator has
  // reached its target. Returns the ticks taken; throws Timeout.
  int run_until_settled(int max_ticks);

  bool motion_pending() const { return !queue_.empty() || (tracking_ && !sim_.settled()); }

  const RobotSim& sim() const { return sim_; }
  const Session& session() const { return session_; }
  const std::vector<LatencyPair>& latency_log() const { return latency_; }
  const std::vector<TrajectorySample>& hand_trace() const { return hand_; }
  const std::vector<TrajectorySample>& tip_trace() const { return tip_; }
  std::uint64_t rejected_targets() const { return rejected_; }
  std::uint64_t wrist_samples() const { return wrist_samples_; }

 private:
  std::vector<Outbound> dispatch(const SessionEvent& event);
  void submit(const JointVector& q, std::vector<Outbound>& replies);
  std::int64_t now_us() const;

  RobotSim sim_;
  Session session_;
  bool record_traces_;
  std::deque<JointVector> queue_;
  bool tracking_ = false;
  ClientId next_client_ = 1;
  std::vector<LatencyPair> latency_;
  std::vector<TrajectorySample> hand_;
  std::vector<TrajectorySample> tip_;
  std::uint64_t rejected_ = 0;
  std::uint64_t wrist_samples_ = 0;
  std::chrono::steady_clock::time_point epoch_;
};

}  // namespace teleop
