#include "teleop/runtime.hpp"

namespace teleop {

Runtime::Runtime(const TeleopConfig& config, const RigidTransform& calibration,
                 bool record_traces)
    : sim_(config.arm, config.sim, config.home),
      session_(config.arm, calibration,
               [&] {
                 SessionConfig s = config.session;
                 s.tick_rate_hz = config.sim.tick_rate_hz;
                 return s;
               }(),
               config.home),
      record_traces_(record_traces),
      epoch_(std::chrono::steady_clock::now()) {}

std::int64_t Runtime::now_us() const {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() -
                                                               epoch_)
      .count();
}

std::vector<Outbound> Runtime::disconnect(ClientId client) {
  return dispatch(Disconnect{client});
}

std::vector<Outbound> Runtime::deliver(ClientId client, const WireMessage& msg) {
  if (std::holds_alternative<WristSample>(msg)) ++wrist_samples_;
  return dispatch(ClientMessage{client, msg});
}

std::vector<Outbound> Runtime::deliver_frame(ClientId client, std::string_view frame) {
  const std::int64_t received = now_us();
  WireMessage msg;
  try {
    msg = decode(frame);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kMalformedJson) throw;
    return {{client, ErrorMsg{std::string(to_string(e.code())), e.detail()}}};
  }
  const auto before = session_.counters().stream_commands;
  auto out = deliver(client, msg);
  if (session_.counters().stream_commands != before) latency_.push_back({received, now_us()});
  return out;
}

void Runtime::submit(const JointVector& q, std::vector<Outbound>& replies) {
  const SubmitResult r = sim_.submit_target(q);
  if (r.accepted) return;
  ++rejected_;
  const auto to = session_.engaged_client();
  replies.push_back({to, ErrorMsg{std::string(to_string(r.reason)), r.detail}});
}

std::vector<Outbound> Runtime::dispatch(const SessionEvent& event) {
  SessionOutput out = session_.handle(event);
  if (record_traces_ && out.commanded_tip_mm) {
    hand_.push_back({sim_.time_ms(), SampleSource::kHand, *out.commanded_tip_mm});
  }
  for (auto& cmd : out.commands) {
    switch (cmd.kind) {
      case RobotCommand::Kind::kStream:
        queue_.clear();
        tracking_ = false;
        submit(cmd.waypoints.back(), out.replies);
        break;
      case RobotCommand::Kind::kTrajectory:
        queue_.assign(cmd.waypoints.begin(), cmd.waypoints.end());
        tracking_ = true;
        break;
      case RobotCommand::Kind::kHome:
        queue_.clear();
        tracking_ = true;
        submit(cmd.waypoints.back(), out.replies);
        break;
    }
  }
  return std::move(out.replies);
}

StateBroadcast Runtime::tick() {
  bool aborted = false;
  if (!queue_.empty()) {
    const SubmitResult r = sim_.submit_target(queue_.front());
    queue_.pop_front();
    if (!r.accepted) {
      ++rejected_;
      queue_.clear();
      aborted = true;
    }
  }
  StateBroadcast b = sim_.step();
  if (aborted) session_.motion_aborted(sim_.q());
  if (tracking_ && queue_.empty() && sim_.settled()) tracking_ = false;
  session_.handle(Tick{sim_.q(), motion_pending()});
  if (record_traces_) tip_.push_back({sim_.time_ms(), SampleSource::kTip, sim_.tip_mm()});
  b.mode = std::string(to_string(session_.mode()));
  b.engaged_client = session_.engaged_client_name();
  return b;
}

int Runtime::run_until_settled(int max_ticks) {
  for (int n = 0; n < max_ticks; ++n) {
    if (!motion_pending() && sim_.settled()) return n;
    tick();
  }
  if (!motion_pending() && sim_.settled()) return max_ticks;
  throw Error(ErrorCode::kTimeout, "motion not settled after " + std::to_string(max_ticks) +
                                       " ticks");
}

}  // namespace teleop
