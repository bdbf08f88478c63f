#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleop/calibration.hpp"
#include "teleop/config.hpp"
#include "teleop/metrics.hpp"
#include "teleop/protocol.hpp"

namespace teleop {

inline constexpr int kScriptVersion = 1;

struct ScriptEvent {
  std::int64_t t_ms = 0;
  std::string client;
  WireMessage msg;
};

// A recorded operator session plus the scene it was recorded against.
// scene keys: targets_mm (one checkpoint per move, robot frame), plane_z_mm
// (task 1), figures (task 1), trocar_mm / approach_dir / insertion_mm (task 2),
// torso_pose, operator_frame (the true operator-to-robot transform).
struct TaskScript {
  int task = 0;
  std::uint64_t seed = 0;
  nlohmann::json scene = nlohmann::json::object();
  PointPairSet calibration_pairs;
  std::vector<ScriptEvent> events;
};

nlohmann::json script_to_json(const TaskScript& s);
// Throws BadConfig on structural problems.
TaskScript script_from_json(const nlohmann::json& j);
TaskScript load_script(const std::string& path);
// Compact JSON plus a trailing newline; identical scripts give identical bytes.
std::string serialize_script(const TaskScript& s);

// Deterministic per (task, seed). Throws UnknownTask.
TaskScript gen_task(int task, std::uint64_t seed);

// Checks pinch gating, seq order, Hello-first, monotone timestamps and that the
// scene targets lie inside the safety box. Throws ScriptViolation.
void validate_script(const TaskScript& s, const SafetyBox& box = {});

struct ReplayOptions {
  std::optional<TeleopConfig> config;  // defaults when unset
  // Report decode-to-command latency on the host clock instead of the
  // simulated one (the report is then no longer reproducible).
  bool wall_clock_latency = false;
  int settle_timeout_ticks = 6000;
};

struct ReplayResult {
  TaskReport report;
  std::vector<AlignedPair> aligned;
};

// Runs the script through an in-process runtime on simulated time. Every
// MoveSummary is answered with an accepting Validate once the arm has settled.
ReplayResult replay(const TaskScript& script, const ReplayOptions& options = {});

}  // namespace teleop
