#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "teleop/kinematics.hpp"
#include "teleop/types.hpp"

namespace teleop {

enum class SampleSource { kHand, kTip };

struct TrajectorySample {
  double t_ms = 0.0;
  SampleSource source = SampleSource::kHand;
  Vec3 position_mm = Vec3::Zero();
};

struct AlignedPair {
  double t_ms = 0.0;
  Vec3 hand_mm;
  Vec3 tip_mm;
};

struct Deviation {
  double rms_mm = 0.0;
  double max_mm = 0.0;
  std::vector<AlignedPair> aligned;
};

// ||target - FK(q).tip||
double positional_error(const Vec3& target_mm, const ArmModel& model, const JointVector& q);

// Interpolates the tip series (piecewise linear, held flat outside its time
// span) at every hand timestamp and compares pointwise. Needs two samples per
// series; throws EmptySeries otherwise.
Deviation trajectory_deviation(std::span<const TrajectorySample> hand,
                               std::span<const TrajectorySample> tip);

struct LatencyPair {
  std::int64_t receive_us = 0;
  std::int64_t command_us = 0;
};

struct LatencyStats {
  double median_us = 0.0;
  double p95_us = 0.0;
  double max_us = 0.0;
  std::size_t n = 0;
};

// Order statistics of command_us - receive_us. p95 is nearest-rank; the median
// averages the middle pair for even counts. Empty input gives zeros.
LatencyStats latency_stats(std::span<const LatencyPair> log);

struct TimedMarker {
  std::string name;
  double t_s = 0.0;
};

// end - start over markers named "start" and "end". Throws MissingMarker.
double task_timer(std::span<const TimedMarker> markers);

struct ErrorSummary {
  double mean_mm = 0.0;
  double max_mm = 0.0;
  std::size_t n = 0;
};

ErrorSummary summarize_errors(std::span<const double> errors_mm);

struct TaskReport {
  int task = 0;
  std::uint64_t seed = 0;
  ErrorSummary positional_error;
  std::vector<double> checkpoint_errors_mm;
  double trajectory_rms_mm = 0.0;
  double trajectory_max_mm = 0.0;
  LatencyStats latency;
  std::string latency_clock = "simulated";
  double duration_s = 0.0;
  std::uint64_t wrist_samples = 0;
  std::uint64_t stream_commands = 0;
  std::uint64_t ticks = 0;
  std::uint64_t gating_violations = 0;
  std::uint64_t ik_skips = 0;
  std::optional<double> rcm_max_distance_mm;  // only when the camera was inserted
  std::optional<double> insertion_depth_mm;
  std::vector<std::string> errors;  // Error codes the session replied with
};

inline constexpr int kReportVersion = 1;

nlohmann::json to_json(const TaskReport& report);

// t_ms,hand_x,hand_y,hand_z,tip_x,tip_y,tip_z
void write_trajectory_csv(std::ostream& os, const std::vector<AlignedPair>& aligned);
std::vector<AlignedPair> read_trajectory_csv(std::istream& is);

}  // namespace teleop
