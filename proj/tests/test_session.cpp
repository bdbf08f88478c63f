#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracle.hpp"
#include "teleop/config.hpp"
#include "teleop/runtime.hpp"
#include "teleop/session.hpp"

using namespace teleop;

namespace {

constexpr double kPi = std::numbers::pi;

Session make_session(SessionConfig cfg = {}) {
  return Session(ArmModel::kuka_like(), RigidTransform::identity(), cfg,
                 TeleopConfig::default_home());
}

Vec3 home_tip() {
  return oracle::tip_position(ArmModel::kuka_like(), TeleopConfig::default_home());
}

// Operator reading (m) that maps to `p_mm` under the identity calibration.
WristSample wrist(std::uint64_t seq, const Vec3& p_mm) {
  return {seq, 0, p_mm.x() / 1000.0, p_mm.y() / 1000.0, p_mm.z() / 1000.0};
}

SessionOutput send(Session& s, ClientId c, const WireMessage& m) {
  return s.handle(ClientMessage{c, m});
}

std::optional<std::string> error_code(const SessionOutput& out) {
  for (const auto& r : out.replies) {
    if (const auto* e = std::get_if<ErrorMsg>(&r.msg)) return e->code;
  }
  return std::nullopt;
}

std::optional<std::string> error_code(const std::vector<Outbound>& replies) {
  for (const auto& r : replies) {
    if (const auto* e = std::get_if<ErrorMsg>(&r.msg)) return e->code;
  }
  return std::nullopt;
}

ConfigSet approach_to(const Vec3& trocar, const Vec3& dir) {
  ConfigSet c;
  c.approach_trocar_mm = std::array<double, 3>{trocar.x(), trocar.y(), trocar.z()};
  c.approach_dir = std::array<double, 3>{dir.x(), dir.y(), dir.z()};
  return c;
}

ConfigSet insert(const std::string& dir) {
  ConfigSet c;
  c.insert = dir;
  return c;
}

// Trocar straight below the current tip.
Vec3 trocar_below_home(double drop_mm) { return home_tip() - Vec3(0, 0, drop_mm); }

}  // namespace

TEST(Transitions, HelloAdmitsAndIdles) {
  Session s = make_session();
  EXPECT_EQ(s.phase(), Phase::kAwaitHello);
  const auto out = send(s, 1, Hello{"a", "operator"});
  ASSERT_EQ(out.replies.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<HelloAck>(out.replies[0].msg));
  EXPECT_EQ(s.phase(), Phase::kIdle);
  EXPECT_EQ(error_code(send(s, 1, Hello{"a", "operator"})), "ProtocolViolation");
  EXPECT_EQ(error_code(send(s, 2, PinchStart{})), "ProtocolViolation");  // no hello
}

TEST(Transitions, PinchStartCapturesAnchorAtCurrentTip) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  const auto out = send(s, 1, PinchStart{});
  EXPECT_TRUE(out.replies.empty());
  EXPECT_EQ(s.phase(), Phase::kEngaged);
  ASSERT_TRUE(s.anchor());
  EXPECT_LE((s.anchor()->tip.position - home_tip()).norm(), 1e-9);
  EXPECT_EQ(s.engaged_client(), ClientId{1});
  EXPECT_EQ(s.engaged_client_name(), "a");
}

TEST(Transitions, FullAcceptedMove) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  send(s, 1, PinchStart{});
  int commands = 0;
  for (std::uint64_t k = 1; k <= 5; ++k) {
    const auto out = send(s, 1, wrist(k, Vec3(double(k), 0, 0)));
    ASSERT_EQ(out.commands.size(), 1u);
    EXPECT_EQ(out.commands[0].kind, RobotCommand::Kind::kStream);
    ++commands;
  }
  const auto end = send(s, 1, PinchEnd{0, 5});
  EXPECT_EQ(s.phase(), Phase::kAwaitValidation);
  ASSERT_EQ(end.replies.size(), 1u);
  const auto& summary = std::get<MoveSummary>(end.replies[0].msg);
  EXPECT_EQ(summary.n_samples, 5u);
  EXPECT_EQ(summary.move_id, 1u);
  EXPECT_NEAR(summary.tip_end_mm[0] - summary.tip_start_mm[0], 4.0, 1e-2);

  const auto ok = send(s, 1, Validate{1, true});
  EXPECT_TRUE(ok.commands.empty());
  EXPECT_EQ(s.phase(), Phase::kIdle);
  EXPECT_FALSE(s.anchor());
  EXPECT_FALSE(s.engaged_client());
  EXPECT_EQ(s.counters().stream_commands, 5u);
  EXPECT_EQ(s.counters().moves, 1u);
}

TEST(Transitions, RejectCommandsAnchorJoints) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  send(s, 1, PinchStart{});
  const JointVector anchor_q = s.anchor()->joints;
  send(s, 1, wrist(1, Vec3::Zero()));
  send(s, 1, wrist(2, Vec3(0, 30, 0)));
  send(s, 1, PinchEnd{0, 2});
  const auto out = send(s, 1, Validate{1, false});
  ASSERT_EQ(out.commands.size(), 1u);
  EXPECT_EQ(out.commands[0].kind, RobotCommand::Kind::kHome);
  EXPECT_EQ(out.commands[0].waypoints.back(), anchor_q);
  EXPECT_EQ(s.phase(), Phase::kIdle);
}

TEST(Transitions, ValidationErrors) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  send(s, 2, Hello{"b", "operator"});
  EXPECT_EQ(error_code(send(s, 1, Validate{1, true})), "StaleValidation");
  send(s, 1, PinchStart{});
  send(s, 1, PinchEnd{0, 0});
  EXPECT_EQ(error_code(send(s, 1, Validate{7, true})), "StaleValidation");
  EXPECT_EQ(error_code(send(s, 2, Validate{1, true})), "NotEngaged");
  EXPECT_EQ(s.phase(), Phase::kAwaitValidation);
  EXPECT_FALSE(error_code(send(s, 1, Validate{1, true})));
  EXPECT_EQ(error_code(send(s, 1, Validate{1, true})), "StaleValidation");
}

TEST(Transitions, SecondEngagerIsBusy) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  send(s, 2, Hello{"b", "operator"});
  send(s, 1, PinchStart{});
  EXPECT_EQ(error_code(send(s, 2, PinchStart{})), "Busy");
  EXPECT_EQ(s.engaged_client(), ClientId{1});
  // validation still blocks the other client
  send(s, 1, PinchEnd{0, 0});
  EXPECT_EQ(error_code(send(s, 2, PinchStart{})), "Busy");
  send(s, 1, Validate{1, true});
  EXPECT_FALSE(error_code(send(s, 2, PinchStart{})));
  EXPECT_EQ(s.engaged_client(), ClientId{2});
}

TEST(Transitions, PinchEndWithoutPinchIsNotEngaged) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  EXPECT_EQ(error_code(send(s, 1, PinchEnd{0, 0})), "NotEngaged");
}

TEST(Transitions, ConfigSetOnlyWhileIdle) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  ConfigSet c;
  c.scale = 20.0;
  EXPECT_EQ(error_code(send(s, 1, c)), "BadConfig");
  c.scale = 2.0;
  EXPECT_FALSE(error_code(send(s, 1, c)));
  EXPECT_EQ(s.config().scale, 2.0);
  send(s, 1, PinchStart{});
  EXPECT_EQ(error_code(send(s, 1, c)), "Busy");
  c = {};
  c.insert = "in";
  c.mode = "free_space";
  send(s, 1, PinchEnd{0, 0});
  send(s, 1, Validate{1, true});
  EXPECT_EQ(error_code(send(s, 1, c)), "ProtocolViolation");
  EXPECT_EQ(error_code(send(s, 1, insert("in"))), "WrongMode");
}

TEST(Transitions, EngagedDisconnectReturnsToAnchor) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  send(s, 2, Hello{"b", "operator"});
  send(s, 1, PinchStart{});
  const JointVector anchor_q = s.anchor()->joints;
  const auto out = s.handle(Disconnect{1});
  ASSERT_EQ(out.commands.size(), 1u);
  EXPECT_EQ(out.commands[0].waypoints.back(), anchor_q);
  EXPECT_EQ(s.phase(), Phase::kIdle);
  EXPECT_FALSE(s.engaged_client());
  s.handle(Disconnect{2});
  EXPECT_EQ(s.phase(), Phase::kAwaitHello);
}

TEST(Transitions, RepeatedIkFailuresSurfaceAnError) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  send(s, 1, PinchStart{});
  send(s, 1, wrist(1, Vec3::Zero()));
  int errors = 0;
  for (std::uint64_t k = 2; k <= 21; ++k) {
    const auto out = send(s, 1, wrist(k, Vec3(5000, 0, 0)));
    EXPECT_TRUE(out.commands.empty());
    if (error_code(out) == "IkFailure") ++errors;
  }
  EXPECT_EQ(errors, 2);
  EXPECT_EQ(s.counters().ik_skips, 20u);
  EXPECT_EQ(s.phase(), Phase::kEngaged);
}

TEST(Pipeline, SampleAtAnchorPointTargetsAnchorTip) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  send(s, 1, PinchStart{});
  const auto out = send(s, 1, wrist(1, Vec3(120, -40, 700)));
  ASSERT_TRUE(out.commanded_tip_mm);
  EXPECT_LE((*out.commanded_tip_mm - home_tip()).norm(), 1e-12);
}

TEST(Pipeline, ScaleTwoDoublesDisplacement) {
  SessionConfig cfg;
  cfg.scale = 2.0;
  Session s = make_session(cfg);
  send(s, 1, Hello{"a", "operator"});
  send(s, 1, PinchStart{});
  const Vec3 p0(100, 0, 0);
  send(s, 1, wrist(1, p0));
  const auto out = send(s, 1, wrist(2, p0 + Vec3(10, 0, 0)));
  EXPECT_LE((*out.commanded_tip_mm - (home_tip() + Vec3(20, 0, 0))).norm(), 1e-9);
}

// Commanded displacement = scale * operator displacement, random scales and points.
TEST(Pipeline, ScalingIsLinearPreIk) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> scale(0.05, 10.0);
  std::uniform_real_distribution<double> coord(-500, 500);
  for (int trial = 0; trial < 200; ++trial) {
    SessionConfig cfg;
    cfg.scale = scale(rng);
    Session s = make_session(cfg);
    send(s, 1, Hello{"a", "operator"});
    send(s, 1, PinchStart{});
    const Vec3 p0(coord(rng), coord(rng), coord(rng));
    const Vec3 p1(coord(rng), coord(rng), coord(rng));
    send(s, 1, wrist(1, p0));
    const Vec3 origin = *s.anchor()->operator_point_mm;
    EXPECT_LE((origin - p0).norm(), 1e-9);
    const Vec3 moved = s.scaled_target(p1) - s.anchor()->tip.position;
    EXPECT_LE((moved - cfg.scale * (p1 - origin)).norm(), 1e-9);
  }
}

// 50 mm drag in 100 samples at scale 0.5: the commanded tips (FK of the
// emitted joints) cover 25 mm.
TEST(Pipeline, HalfScaleDragCoversHalfTheDistance) {
  SessionConfig cfg;
  cfg.scale = 0.5;
  Session s = make_session(cfg);
  const ArmModel m = ArmModel::kuka_like();
  send(s, 1, Hello{"a", "operator"});
  send(s, 1, PinchStart{});
  const Vec3 start(300, 100, 900);
  std::vector<Vec3> tips{home_tip()};
  for (std::uint64_t k = 0; k < 100; ++k) {
    const auto out = send(s, 1, wrist(k + 1, start + Vec3(0, 50.0 * double(k) / 99.0, 0)));
    ASSERT_EQ(out.commands.size(), 1u);
    tips.push_back(oracle::tip_position(m, out.commands[0].waypoints.back()));
  }
  double length = 0.0;
  for (std::size_t i = 1; i < tips.size(); ++i) length += (tips[i] - tips[i - 1]).norm();
  EXPECT_NEAR(length, 25.0, 0.05);
  EXPECT_NEAR((tips.back() - tips.front()).y(), 25.0, 2e-3);
}

TEST(Rcm, StraightDown) {
  TrocarState t;
  t.trocar_mm = Vec3(10, 20, 30);
  const TrocarState r = rcm_constrain(t, t.trocar_mm + Vec3(0, 0, 50));
  EXPECT_NEAR(r.theta_x, 0.0, 1e-15);
  EXPECT_NEAR(r.theta_y, 0.0, 1e-15);
  EXPECT_NEAR(r.depth_mm, 50.0, 1e-12);
}

TEST(Rcm, AlongNegativeY) {
  TrocarState t;
  const TrocarState r = rcm_constrain(t, Vec3(0, -50, 0));
  EXPECT_NEAR(r.theta_x, kPi / 2, 1e-15);
  EXPECT_NEAR(r.theta_y, 0.0, 1e-15);
  EXPECT_NEAR(r.depth_mm, 50.0, 1e-12);
  EXPECT_LE((r.direction() - Vec3(0, -1, 0)).norm(), 1e-15);
}

TEST(Rcm, TooCloseIsDegenerate) {
  TrocarState t;
  t.trocar_mm = Vec3(1, 1, 1);
  try {
    rcm_constrain(t, Vec3(1.5, 1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateDirection);
  }
}

TEST(Rcm, DirectionMatchesStatedConvention) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> a(-1.5, 1.5);
  for (int i = 0; i < 100; ++i) {
    TrocarState t;
    t.theta_x = a(rng);
    t.theta_y = a(rng);
    const Vec3 expect =
        Eigen::AngleAxisd(t.theta_y, Vec3::UnitY()) * (Eigen::AngleAxisd(t.theta_x, Vec3::UnitX()) * Vec3::UnitZ());
    EXPECT_LE((t.local_direction() - expect).norm(), 1e-15);
  }
}

// Random trocar frames and desired tips reconstruct exactly from (theta_x, theta_y, d).
TEST(Rcm, RoundTripThousandTips) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> c(-300, 300);
  std::uniform_real_distribution<double> ang(-kPi, kPi);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    TrocarState t;
    t.trocar_mm = Vec3(c(rng), c(rng), c(rng));
    t.frame = Eigen::AngleAxisd(ang(rng), oracle::random_unit(rng)).toRotationMatrix();
    Vec3 desired;
    do desired = t.trocar_mm + Vec3(c(rng), c(rng), c(rng));
    while ((desired - t.trocar_mm).norm() < 1.0);
    const TrocarState r = rcm_constrain(t, desired);
    worst = std::max(worst, (r.tip_mm() - desired).norm());
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Rcm, DepthIncrementMovesAlongShaft) {
  TrocarState t;
  t.trocar_mm = Vec3(500, 0, 80);
  const Vec3 before = t.tip_mm();
  t.depth_mm += 1.0;
  EXPECT_LE((t.tip_mm() - before - Vec3(0, 0, 1)).norm(), 1e-15);
}

TEST(Approach, HundredMillimeterStraightSegment) {
  Session s = make_session();
  const ArmModel m = ArmModel::kuka_like();
  const Vec3 start = home_tip();
  // 100 mm to the 20 mm standoff, then 20 mm along the axis
  const Vec3 trocar = trocar_below_home(120);
  const Vec3 standoff = trocar + Vec3(0, 0, 20);
  const auto wps = s.plan_approach(TeleopConfig::default_home(), trocar, Vec3(0, 0, -1));
  ASSERT_GE(wps.size(), 100u);
  Vec3 prev = start;
  double worst_gap = 0.0, worst_dev = 0.0;
  for (const auto& q : wps) {
    const Vec3 tip = oracle::tip_position(m, q);
    worst_gap = std::max(worst_gap, (tip - prev).norm());
    // the whole path lies on the vertical line through start, standoff and trocar
    const Vec3 axis = (trocar - start).normalized();
    const Vec3 r = tip - start;
    worst_dev = std::max(worst_dev, (r - r.dot(axis) * axis).norm());
    prev = tip;
  }
  EXPECT_LE(worst_gap, 1.0);
  EXPECT_LE(worst_dev, 0.1);
  EXPECT_LE((prev - trocar).norm(), 2e-3);
  // the first 100 mm end at the standoff point
  bool passed_standoff = false;
  for (const auto& q : wps) passed_standoff |= (oracle::tip_position(m, q) - standoff).norm() < 2e-3;
  EXPECT_TRUE(passed_standoff);
}

TEST(Approach, AlreadyAtTrocarAndAlignedIsEmpty) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  const Pose tip = forward_kinematics(ArmModel::kuka_like(), TeleopConfig::default_home()).tip;
  const Vec3 axis = tip.orientation * Vec3::UnitZ();
  EXPECT_TRUE(s.plan_approach(TeleopConfig::default_home(), tip.position, axis).empty());
  const auto out = send(s, 1, approach_to(tip.position, axis));
  EXPECT_TRUE(out.commands.empty());
  EXPECT_FALSE(error_code(out));
  EXPECT_EQ(s.mode(), Mode::kInserted);
}

TEST(Approach, FarTrocarIsUnreachable) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  const auto out = send(s, 1, approach_to(Vec3(10000, 0, 0), Vec3(0, 0, -1)));
  EXPECT_EQ(error_code(out), "Unreachable");
  EXPECT_TRUE(out.commands.empty());
  EXPECT_EQ(s.mode(), Mode::kFreeSpace);
}

TEST(Insertion, OutAtZeroDepthIsDepthLimit) {
  Session s = make_session();
  send(s, 1, Hello{"a", "operator"});
  const Pose tip = forward_kinematics(ArmModel::kuka_like(), TeleopConfig::default_home()).tip;
  send(s, 1, approach_to(tip.position, tip.orientation * Vec3::UnitZ()));
  ASSERT_EQ(s.mode(), Mode::kInserted);
  const auto out = send(s, 1, insert("out"));
  EXPECT_EQ(error_code(out), "DepthLimit");
  EXPECT_TRUE(out.commands.empty());
  EXPECT_EQ(s.trocar().depth_mm, 0.0);
}

// Closed loop through the runtime: approach, then 30 one-millimeter increments.
// Every simulator tick of the insertion keeps the shaft within 0.5 mm of the
// trocar point.
class InsertedFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    client = rt.connect();
    rt.deliver(client, Hello{"a", "operator"});
    trocar = trocar_below_home(50);  // leaves 30 mm of insertion above the box floor
    ASSERT_FALSE(error_code(rt.deliver(client, approach_to(trocar, Vec3(0, 0, -1)))));
    EXPECT_EQ(rt.session().mode(), Mode::kApproach);
    rt.run_until_settled(10000);
    ASSERT_EQ(rt.session().mode(), Mode::kInserted);
    ASSERT_LE((rt.sim().tip_mm() - trocar).norm(), 2e-3);
  }

  Runtime rt{TeleopConfig{}, RigidTransform::identity()};
  ClientId client = 0;
  Vec3 trocar;
};

TEST_F(InsertedFixture, ThirtyIncrementsKeepTheRcm) {
  double worst = 0.0;
  for (int k = 1; k <= 30; ++k) {
    const Vec3 before = rt.sim().tip_mm();
    ASSERT_FALSE(error_code(rt.deliver(client, insert("in")))) << k;
    while (rt.motion_pending()) {
      rt.tick();
      worst = std::max(worst, shaft_line_distance(rt.sim().poses(), trocar));
    }
    EXPECT_NEAR((rt.sim().tip_mm() - before).z(), -1.0, 2e-3) << k;
  }
  EXPECT_DOUBLE_EQ(rt.session().trocar().depth_mm, 30.0);
  EXPECT_LE(worst, 0.5);
  EXPECT_LE((rt.sim().tip_mm() - (trocar - Vec3(0, 0, 30))).norm(), 2e-3);
}

TEST_F(InsertedFixture, IncrementTakesVelocityTimedTicks) {
  rt.deliver(client, insert("in"));
  // 1 mm at 2 mm/s and 100 Hz: 50 waypoints, one per tick
  int ticks = 0;
  while (rt.motion_pending()) {
    rt.tick();
    ++ticks;
  }
  EXPECT_GE(ticks, 50);
  EXPECT_LE(ticks, 52);
}

// A slow circular drag at 30 mm depth: 8 mm radius, 60 Hz samples over 4 s.
// Each emitted joint command puts the shaft through the trocar, and the
// simulated arm stays within 0.5 mm of it on every tick in between.
TEST_F(InsertedFixture, DragsReaimAroundTheTrocar) {
  for (int k = 1; k <= 30; ++k) {
    rt.deliver(client, insert("in"));
    rt.run_until_settled(1000);
  }
  rt.deliver(client, PinchStart{});
  const ArmModel m = ArmModel::kuka_like();
  double worst_cmd = 0.0, worst_tick = 0.0;
  int ticks = 0;
  for (std::uint64_t k = 0; k < 240; ++k) {
    const double a = 2 * kPi * double(k) / 240.0;
    const auto out = rt.deliver(client, wrist(k + 1, Vec3(8 * std::sin(a), 8 * (1 - std::cos(a)), 0)));
    EXPECT_FALSE(error_code(out));
    worst_cmd = std::max(worst_cmd, shaft_line_distance(forward_kinematics(m, rt.sim().target()), trocar));
    // 100 Hz ticks between 60 Hz samples
    for (; ticks * 60 < int(k + 1) * 100; ++ticks) {
      rt.tick();
      worst_tick = std::max(worst_tick, shaft_line_distance(rt.sim().poses(), trocar));
    }
  }
  rt.run_until_settled(1000);
  std::printf("drag: worst command %.2e mm, worst tick %.3f mm\n", worst_cmd, worst_tick);
  EXPECT_LE(worst_cmd, 1e-2);
  EXPECT_LE(worst_tick, 0.5);
  EXPECT_DOUBLE_EQ(rt.session().trocar().depth_mm, 30.0);
  EXPECT_NEAR((rt.sim().tip_mm() - trocar).norm(), 30.0, 1e-2);
}

TEST_F(InsertedFixture, LeavingRequiresZeroDepth) {
  ConfigSet leave;
  leave.mode = "free_space";
  rt.deliver(client, insert("in"));
  rt.run_until_settled(1000);
  EXPECT_EQ(error_code(rt.deliver(client, leave)), "DepthLimit");
  rt.deliver(client, insert("out"));
  rt.run_until_settled(1000);
  EXPECT_FALSE(error_code(rt.deliver(client, leave)));
  EXPECT_EQ(rt.session().mode(), Mode::kFreeSpace);
}

TEST(ClosedLoop, RejectReturnsTipToAnchor) {
  Runtime rt{TeleopConfig{}, RigidTransform::identity()};
  const ClientId c = rt.connect();
  rt.deliver(c, Hello{"a", "operator"});
  rt.deliver(c, PinchStart{});
  const Vec3 anchor_tip = rt.session().anchor()->tip.position;
  for (std::uint64_t k = 0; k < 60; ++k) {
    rt.deliver(c, wrist(k + 1, Vec3(0.5 * double(k), -0.3 * double(k), 0.2 * double(k))));
    rt.tick();
  }
  rt.run_until_settled(5000);
  EXPECT_GT((rt.sim().tip_mm() - anchor_tip).norm(), 20.0);
  rt.deliver(c, PinchEnd{0, 60});
  rt.deliver(c, Validate{1, false});
  EXPECT_TRUE(rt.motion_pending());
  // no new pinch while homing
  EXPECT_EQ(error_code(rt.deliver(c, PinchStart{})), "Busy");
  rt.run_until_settled(5000);
  EXPECT_LE((rt.sim().tip_mm() - anchor_tip).norm(), 1e-3);
}

// Random multi-client event streams. A stream command may only come out of a
// wrist sample from the engaged client while the session is Engaged, and every
// command of any kind needs an explicit cause.
TEST(Fuzz, GatingAndSingleWriter) {
  std::mt19937_64 rng(2025);
  std::uint64_t stream_cmds = 0, ungated = 0, foreign = 0, summaries = 0, validations = 0;
  for (int run = 0; run < 40; ++run) {
    Session s = make_session();
    std::map<ClientId, std::uint64_t> seq;
    for (int i = 0; i < 1500; ++i) {
      const ClientId c = std::uniform_int_distribution<ClientId>(1, 3)(rng);
      const Phase before = s.phase();
      const auto engaged = s.engaged_client();
      const auto pending = s.pending_move();
      WireMessage msg;
      const int k = std::uniform_int_distribution<int>(0, 19)(rng);
      if (k == 0) msg = Hello{"c" + std::to_string(c), "operator"};
      else if (k <= 2) msg = PinchStart{};
      else if (k <= 3) msg = PinchEnd{0, seq[c]};
      else if (k <= 5) {
        const std::uint64_t id = pending && (rng() % 4) ? pending->move_id : rng() % 5;
        msg = Validate{id, (rng() % 2) == 0};
      } else if (k == 6) {
        ConfigSet cs;
        cs.scale = 0.5 + double(rng() % 3) * 0.5;
        msg = cs;
      } else {
        seq[c] += (rng() % 5 == 0) ? 0 : 1;  // occasional repeated seq
        std::normal_distribution<double> n(0.0, 15.0);
        msg = wrist(seq[c], Vec3(n(rng), n(rng), n(rng)));
      }
      const bool drop = rng() % 50 == 0;
      const SessionOutput out = drop ? s.handle(Disconnect{c}) : send(s, c, msg);
      for (const auto& r : out.replies) {
        if (std::holds_alternative<MoveSummary>(r.msg)) ++summaries;
      }
      if (!drop && std::holds_alternative<Validate>(msg) && !error_code(out)) ++validations;
      for (const auto& cmd : out.commands) {
        if (cmd.kind == RobotCommand::Kind::kStream) {
          ++stream_cmds;
          if (drop || before != Phase::kEngaged || !std::holds_alternative<WristSample>(msg)) {
            ++ungated;
          }
          if (engaged != c) ++foreign;
        } else if (cmd.kind == RobotCommand::Kind::kHome) {
          // homing only on rejection or the engaged client's disconnect
          const auto* v = std::get_if<Validate>(&msg);
          const bool reject = !drop && v && !v->accepted && before == Phase::kAwaitValidation;
          const bool dropped = drop && engaged == c;
          if (!reject && !dropped) ++ungated;
        } else {
          ++ungated;  // no approach/insert requests in this stream
        }
      }
      s.handle(Tick{s.observed_q(), false});
    }
  }
  EXPECT_GT(stream_cmds, 1000u);
  EXPECT_EQ(ungated, 0u);
  EXPECT_EQ(foreign, 0u);
  EXPECT_GT(summaries, 50u);
  // a summary is consumed by at most one Validate; disconnects drop the rest
  EXPECT_LE(validations, summaries);
}
