#include "teleop/tasks.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>

#include "teleop/runtime.hpp"

namespace teleop {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSampleRateHz = 60.0;
constexpr double kHandSpeedMmS = 50.0;
constexpr const char* kClient = "holo-1";

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 json_vec(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

double min_jerk(double tau) { return tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau); }

// Turns robot-frame motion intents into the wrist stream an operator standing
// in another frame would produce.
class ScriptBuilder {
 public:
  ScriptBuilder(std::mt19937_64& rng, const RigidTransform& op_to_robot, double tremor_mm)
      : rng_(rng), op_to_robot_(op_to_robot), tremor_mm_(tremor_mm) {
    std::uniform_real_distribution<double> u(-100.0, 100.0);
    hand_op_mm_ = Vec3(u(rng_), u(rng_), u(rng_));
  }

  void emit(WireMessage msg, std::int64_t gap_ms = 0) {
    events_.push_back({t_ms_, kClient, std::move(msg)});
    t_ms_ += gap_ms;
  }

  void set_scale(double s) { scale_ = s; }

  // `offset(tau)` is the intended robot tip displacement from the move start,
  // tau in [0, 1] over `duration_s`. Tremor vanishes at both ends.
  void move(const std::function<Vec3(double)>& offset, double duration_s, bool ease = true) {
    const int n = std::max(2, static_cast<int>(std::ceil(duration_s * kSampleRateHz)));
    const Vec3 start = hand_op_mm_;
    const Mat3 r_inv = op_to_robot_.rotation.conjugate().toRotationMatrix();
    std::normal_distribution<double> noise(0.0, tremor_mm_);
    const std::int64_t t0 = t_ms_;
    emit(PinchStart{t0});
    Vec3 last = start;
    std::int64_t t_last = t0;
    for (int k = 0; k <= n; ++k) {
      const double tau = static_cast<double>(k) / n;
      const double s = ease ? min_jerk(tau) : tau;
      Vec3 p = start + r_inv * offset(s) / scale_;
      const double w = std::sin(kPi * tau);
      p += w * Vec3(noise(rng_), noise(rng_), noise(rng_));
      if (k == n) p = start + r_inv * offset(1.0) / scale_;
      t_last = t0 + static_cast<std::int64_t>(std::llround(k * 1000.0 / kSampleRateHz));
      t_ms_ = t_last;
      emit(WristSample{++seq_, t_last, p.x() / 1000.0, p.y() / 1000.0, p.z() / 1000.0});
      last = p;
    }
    t_ms_ = t_last + 10;
    emit(PinchEnd{t_ms_, seq_});
    hand_op_mm_ = last;
    t_ms_ += 400;
  }

  void straight(const Vec3& from, const Vec3& to) {
    const Vec3 d = to - from;
    move([d](double s) { return Vec3(s * d); }, std::max(0.5, d.norm() / kHandSpeedMmS));
  }

  std::int64_t now() const { return t_ms_; }
  std::vector<ScriptEvent> take() { return std::move(events_); }

 private:
  std::mt19937_64& rng_;
  RigidTransform op_to_robot_;
  double tremor_mm_;
  double scale_ = 1.0;
  Vec3 hand_op_mm_;
  std::int64_t t_ms_ = 0;
  std::uint64_t seq_ = 0;
  std::vector<ScriptEvent> events_;
};

RigidTransform random_operator_frame(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1000.0, 1000.0);
  Quat q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  RigidTransform t;
  t.rotation = q;
  t.translation_mm = Vec3(u(rng), u(rng), u(rng));
  return t;
}

nlohmann::json transform_json(const RigidTransform& t) {
  const Quat& q = t.rotation;
  return {{"rotation_wxyz", {q.w(), q.x(), q.y(), q.z()}},
          {"translation_mm", vec_json(t.translation_mm)}};
}

// The robot is driven to marker points the operator then touches; readings
// carry isotropic noise.
PointPairSet calibration_markers(std::mt19937_64& rng, const RigidTransform& op_to_robot) {
  std::uniform_real_distribution<double> ux(340.0, 640.0), uy(-150.0, 150.0), uz(80.0, 330.0);
  std::normal_distribution<double> noise(0.0, 0.2);
  const RigidTransform robot_to_op = op_to_robot.inverse();
  PointPairSet set;
  for (int i = 0; i < 8; ++i) {
    const Vec3 robot(ux(rng), uy(rng), uz(rng));
    const Vec3 op = robot_to_op.apply(robot) + Vec3(noise(rng), noise(rng), noise(rng));
    set.pairs.push_back({op / 1000.0, robot, "m" + std::to_string(i + 1)});
  }
  return set;
}

Vec3 home_tip() {
  return forward_kinematics(ArmModel::kuka_like(), TeleopConfig::default_home()).tip.position;
}

TaskScript task1(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TaskScript s;
  s.task = 1;
  s.seed = seed;
  const RigidTransform frame = random_operator_frame(rng);
  s.calibration_pairs = calibration_markers(rng, frame);
  ScriptBuilder b(rng, frame, 0.3);

  std::uniform_real_distribution<double> shift(-20.0, 20.0), turn(-kPi, kPi);
  const Vec3 start = home_tip();
  const double z = start.z();
  const Vec3 c(490.0 + shift(rng), shift(rng), z);
  const double psi = turn(rng);
  auto dir = [&](double a) { return Vec3(std::cos(psi + a), std::sin(psi + a), 0.0); };

  std::vector<Vec3> square, triangle;
  for (int k = 0; k < 4; ++k) square.push_back(c + 50.0 * std::sqrt(2.0) * dir(kPi / 4 + k * kPi / 2));
  const double tri_r = 100.0 / std::sqrt(3.0);
  for (int k = 0; k < 3; ++k) triangle.push_back(c + tri_r * dir(kPi / 2 + k * 2 * kPi / 3));
  const double r = 50.0;

  std::vector<Vec3> targets;
  b.emit(Hello{kClient, "operator"}, 200);

  Vec3 at = start;
  auto go = [&](const Vec3& to) {
    b.straight(at, to);
    targets.push_back(to);
    at = to;
  };
  go(square[0]);
  for (int k = 1; k <= 4; ++k) go(square[k % 4]);

  go(c + r * dir(0.0));
  for (int k = 0; k < 4; ++k) {
    const double a0 = k * kPi / 2;
    const Vec3 from = at;
    b.move([&, a0, from](double s) { return Vec3(c + r * dir(a0 + s * kPi / 2) - from); },
           (r * kPi / 2) / kHandSpeedMmS);
    at = c + r * dir(a0 + kPi / 2);
    targets.push_back(at);
  }

  go(triangle[0]);
  for (int k = 1; k <= 3; ++k) go(triangle[k % 3]);

  nlohmann::json targets_json = nlohmann::json::array();
  for (const auto& t : targets) targets_json.push_back(vec_json(t));
  auto poly = [](const std::vector<Vec3>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : v) a.push_back(vec_json(p));
    return a;
  };
  s.scene = {{"plane_z_mm", z},
             {"targets_mm", targets_json},
             {"figures",
              {{{"name", "square"}, {"side_mm", 100.0}, {"vertices_mm", poly(square)}},
               {{"name", "circle"}, {"radius_mm", r}, {"center_mm", vec_json(c)}},
               {{"name", "triangle"}, {"side_mm", 100.0}, {"vertices_mm", poly(triangle)}}}},
             {"operator_frame", transform_json(frame)}};
  s.events = b.take();
  return s;
}

TaskScript task2(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TaskScript s;
  s.task = 2;
  s.seed = seed;
  const RigidTransform frame = random_operator_frame(rng);
  s.calibration_pairs = calibration_markers(rng, frame);
  ScriptBuilder b(rng, frame, 0.3);

  std::uniform_real_distribution<double> ux(-80.0, 80.0), uy(-120.0, 120.0), uz(20.0, 150.0);
  const Vec3 start = home_tip();
  std::vector<Vec3> targets;
  for (int k = 0; k < 3; ++k) targets.push_back(Vec3(490.0 + ux(rng), uy(rng), start.z() + uz(rng)));

  std::uniform_real_distribution<double> tx(-30.0, 30.0), ty(-40.0, 40.0), tilt(-0.25, 0.25);
  const Vec3 trocar(500.0 + tx(rng), ty(rng), 80.0);
  const Vec3 approach = Vec3(tilt(rng), tilt(rng), -1.0).normalized();
  const double insertion_mm = 30.0;
  const double increment_mm = 1.0;

  b.emit(Hello{kClient, "operator"}, 200);
  Vec3 at = start;
  for (const auto& t : targets) {
    b.straight(at, t);
    at = t;
  }
  ConfigSet tuning;
  tuning.insert_increment_mm = increment_mm;
  tuning.insert_velocity_mm_s = 2.0;
  b.emit(tuning, 100);
  ConfigSet go;
  go.approach_trocar_mm = std::array<double, 3>{trocar.x(), trocar.y(), trocar.z()};
  go.approach_dir = std::array<double, 3>{approach.x(), approach.y(), approach.z()};
  b.emit(go, 6000);
  const int n = static_cast<int>(std::lround(insertion_mm / increment_mm));
  for (int k = 0; k < n; ++k) {
    ConfigSet in;
    in.insert = "in";
    b.emit(in, 600);
  }

  nlohmann::json targets_json = nlohmann::json::array();
  for (const auto& t : targets) targets_json.push_back(vec_json(t));
  s.scene = {{"targets_mm", targets_json},
             {"trocar_mm", vec_json(trocar)},
             {"approach_dir", vec_json(approach)},
             {"insertion_mm", insertion_mm},
             {"torso_pose",
              {{"position_mm", vec_json(trocar - Vec3(0.0, 0.0, 80.0))},
               {"rotation_wxyz", {1.0, 0.0, 0.0, 0.0}}}},
             {"operator_frame", transform_json(frame)}};
  s.events = b.take();
  return s;
}

TaskScript task3(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TaskScript s;
  s.task = 3;
  s.seed = seed;
  const RigidTransform frame = random_operator_frame(rng);
  s.calibration_pairs = calibration_markers(rng, frame);
  ScriptBuilder b(rng, frame, 0.3);

  const double scale = 0.5;
  const double duration_s = 40.0;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  const Vec3 amp(60.0, 60.0, 30.0);
  const Vec3 freq(0.05, 0.075, 0.1);
  const Vec3 ph(phase(rng), phase(rng), phase(rng));
  auto curve = [=](double t_s) {
    Vec3 p;
    for (int i = 0; i < 3; ++i) {
      p[i] = amp[i] * (std::sin(2.0 * kPi * freq[i] * t_s + ph[i]) - std::sin(ph[i]));
    }
    return p;
  };

  b.emit(Hello{kClient, "operator"}, 200);
  ConfigSet cfg;
  cfg.scale = scale;
  b.emit(cfg, 200);
  b.set_scale(scale);
  b.move([&](double s) { return curve(s * duration_s); }, duration_s, false);

  const Vec3 end = home_tip() + curve(duration_s);
  s.scene = {{"targets_mm", {vec_json(end)}},
             {"curve",
              {{"kind", "lissajous"},
               {"amplitude_mm", vec_json(amp)},
               {"frequency_hz", vec_json(freq)},
               {"phase_rad", vec_json(ph)},
               {"duration_s", duration_s},
               {"scale", scale}}},
             {"operator_frame", transform_json(frame)}};
  s.events = b.take();
  return s;
}

}  // namespace

nlohmann::json script_to_json(const TaskScript& s) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : s.events) {
    events.push_back({{"t_ms", e.t_ms}, {"client", e.client}, {"msg", to_json(e.msg)}});
  }
  return {{"script_version", kScriptVersion},
          {"task", s.task},
          {"seed", s.seed},
          {"scene", s.scene},
          {"calibration_pairs", point_pairs_to_json(s.calibration_pairs)},
          {"events", events}};
}

TaskScript script_from_json(const nlohmann::json& j) {
  TaskScript s;
  try {
    if (!j.is_object()) throw Error(ErrorCode::kBadConfig, "script must be a JSON object");
    s.task = j.value("task", 0);
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("scene")) s.scene = j.at("scene");
    if (j.contains("calibration_pairs")) {
      s.calibration_pairs = point_pairs_from_json(j.at("calibration_pairs"));
    }
    if (j.contains("events")) {
      for (const auto& e : j.at("events")) {
        s.events.push_back({e.at("t_ms").get<std::int64_t>(), e.at("client").get<std::string>(),
                            from_json(e.at("msg"))});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, std::string("script: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kBadConfig) throw;
    throw Error(ErrorCode::kBadConfig, std::string("script event: ") + e.what());
  }
  return s;
}

TaskScript load_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kBadConfig, "cannot open script " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, path + ": " + e.what());
  }
  return script_from_json(j);
}

std::string serialize_script(const TaskScript& s) { return script_to_json(s).dump() + "\n"; }

TaskScript gen_task(int task, std::uint64_t seed) {
  switch (task) {
    case 1: return task1(seed);
    case 2: return task2(seed);
    case 3: return task3(seed);
    default: throw Error(ErrorCode::kUnknownTask, "task must be 1, 2 or 3, got " + std::to_string(task));
  }
}

void validate_script(const TaskScript& s, const SafetyBox& box) {
  std::map<std::string, PinchGate> gates;
  std::map<std::string, bool> greeted;
  std::int64_t last_t = std::numeric_limits<std::int64_t>::min();
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    const std::string where = "event " + std::to_string(i) + " (" +
                              std::string(type_tag(e.msg)) + " from " + e.client + ")";
    if (e.t_ms < last_t) throw Error(ErrorCode::kScriptViolation, where + ": time goes backwards");
    last_t = e.t_ms;
    if (std::holds_alternative<Hello>(e.msg)) {
      if (greeted[e.client]) throw Error(ErrorCode::kScriptViolation, where + ": repeated Hello");
      greeted[e.client] = true;
      continue;
    }
    if (!greeted[e.client]) throw Error(ErrorCode::kScriptViolation, where + ": before Hello");
    if (std::holds_alternative<Validate>(e.msg)) {
      throw Error(ErrorCode::kScriptViolation, where + ": validations are answered by replay");
    }
    if (std::holds_alternative<HelloAck>(e.msg) || std::holds_alternative<MoveSummary>(e.msg) ||
        std::holds_alternative<StateBroadcast>(e.msg) || std::holds_alternative<ErrorMsg>(e.msg)) {
      throw Error(ErrorCode::kScriptViolation, where + ": server-to-client message");
    }
    switch (gates[e.client].observe(e.msg)) {
      case PinchGate::Verdict::kPass: break;
      case PinchGate::Verdict::kGatingViolation:
        throw Error(ErrorCode::kScriptViolation, where + ": outside a pinch window");
      case PinchGate::Verdict::kSequenceViolation:
        throw Error(ErrorCode::kScriptViolation, where + ": seq not increasing");
    }
  }
  if (s.scene.contains("targets_mm")) {
    for (const auto& t : s.scene.at("targets_mm")) {
      if (!box.contains(json_vec(t))) {
        throw Error(ErrorCode::kScriptViolation, "scene target outside the safety box");
      }
    }
  }
}

ReplayResult replay(const TaskScript& script, const ReplayOptions& options) {
  const TeleopConfig config = options.config.value_or(TeleopConfig{});
  validate_script(script, config.sim.safety_box);

  RigidTransform calibration;
  if (!script.calibration_pairs.pairs.empty()) {
    calibration = register_frames(script.calibration_pairs).transform;
  }
  Runtime rt(config, calibration, true);

  std::vector<Vec3> targets;
  if (script.scene.contains("targets_mm")) {
    for (const auto& t : script.scene.at("targets_mm")) targets.push_back(json_vec(t));
  }
  std::optional<Vec3> trocar;
  if (script.scene.contains("trocar_mm")) trocar = json_vec(script.scene.at("trocar_mm"));

  TaskReport report;
  report.task = script.task;
  report.seed = script.seed;
  report.latency_clock = options.wall_clock_latency ? "wall" : "simulated";

  std::optional<double> rcm_max;
  auto tick = [&] {
    rt.tick();
    if (trocar && rt.session().mode() == Mode::kInserted) {
      const double d = shaft_line_distance(rt.sim().poses(), rt.session().trocar().trocar_mm);
      rcm_max = std::max(rcm_max.value_or(0.0), d);
    }
  };
  auto settle = [&] {
    for (int n = 0; n < options.settle_timeout_ticks; ++n) {
      if (!rt.motion_pending() && rt.sim().settled()) return;
      tick();
    }
    if (rt.motion_pending() || !rt.sim().settled()) {
      throw Error(ErrorCode::kTimeout, "arm did not settle during replay");
    }
  };

  std::map<std::string, ClientId> ids;
  std::vector<double> checkpoint_errors;
  std::vector<LatencyPair> sim_latency;
  double offset_ms = 0.0;
  const double start_ms = script.events.empty() ? 0.0 : static_cast<double>(script.events.front().t_ms);

  for (const auto& e : script.events) {
    const double due = static_cast<double>(e.t_ms) - start_ms + offset_ms;
    while (rt.sim().time_ms() + 1e-9 < due) tick();

    auto [it, fresh] = ids.try_emplace(e.client, 0);
    if (fresh) it->second = rt.connect();
    const ClientId id = it->second;

    const auto commands_before = rt.session().counters().stream_commands;
    auto replies = rt.deliver_frame(id, encode(e.msg));
    if (rt.session().counters().stream_commands != commands_before) {
      const auto t_us = static_cast<std::int64_t>(std::llround(rt.sim().time_ms() * 1000.0));
      sim_latency.push_back({t_us, t_us});
    }

    bool wait = false;
    for (const auto& r : replies) {
      if (const auto* err = std::get_if<ErrorMsg>(&r.msg)) {
        report.errors.push_back(err->code);
      } else if (const auto* summary = std::get_if<MoveSummary>(&r.msg)) {
        settle();
        const std::size_t k = checkpoint_errors.size();
        if (k < targets.size()) {
          checkpoint_errors.push_back(positional_error(targets[k], rt.sim().model(), rt.sim().q()));
        }
        auto ack = rt.deliver_frame(id, encode(Validate{summary->move_id, true}));
        for (const auto& a : ack) {
          if (const auto* err = std::get_if<ErrorMsg>(&a.msg)) report.errors.push_back(err->code);
        }
        wait = true;
      }
    }
    if (std::holds_alternative<ConfigSet>(e.msg) && rt.motion_pending()) {
      settle();
      wait = true;
    }
    if (wait) {
      offset_ms = std::max(offset_ms, rt.sim().time_ms() - (static_cast<double>(e.t_ms) - start_ms));
    }
  }
  settle();

  report.checkpoint_errors_mm = checkpoint_errors;
  report.positional_error = summarize_errors(checkpoint_errors);
  report.latency =
      latency_stats(options.wall_clock_latency ? std::span<const LatencyPair>(rt.latency_log())
                                               : std::span<const LatencyPair>(sim_latency));
  const std::vector<TimedMarker> markers{{"start", 0.0}, {"end", rt.sim().time_ms() / 1000.0}};
  report.duration_s = task_timer(markers);
  report.wrist_samples = rt.wrist_samples();
  report.stream_commands = rt.session().counters().stream_commands;
  report.ticks = rt.sim().tick();
  report.gating_violations = rt.session().counters().gating_violations;
  report.ik_skips = rt.session().counters().ik_skips;
  report.rcm_max_distance_mm = rcm_max;
  if (trocar && rt.session().mode() == Mode::kInserted) {
    report.insertion_depth_mm = (rt.sim().tip_mm() - *trocar).dot(rt.session().trocar().direction());
  }

  ReplayResult result;
  if (rt.hand_trace().size() >= 2 && rt.tip_trace().size() >= 2) {
    Deviation dev = trajectory_deviation(rt.hand_trace(), rt.tip_trace());
    report.trajectory_rms_mm = dev.rms_mm;
    report.trajectory_max_mm = dev.max_mm;
    result.aligned = std::move(dev.aligned);
  }
  result.report = std::move(report);
  return result;
}

}  // namespace teleop
