#include "teleop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "teleop/error.hpp"

namespace teleop {

double positional_error(const Vec3& target_mm, const ArmModel& model, const JointVector& q) {
  return (target_mm - forward_kinematics(model, q).tip.position).norm();
}

Deviation trajectory_deviation(std::span<const TrajectorySample> hand,
                               std::span<const TrajectorySample> tip) {
  if (hand.size() < 2 || tip.size() < 2) {
    throw Error(ErrorCode::kEmptySeries, "need at least two hand and two tip samples");
  }
  Deviation out;
  out.aligned.reserve(hand.size());
  double sum_sq = 0.0;
  std::size_t j = 0;
  for (const auto& h : hand) {
    Vec3 p;
    if (h.t_ms <= tip.front().t_ms) {
      p = tip.front().position_mm;
    } else if (h.t_ms >= tip.back().t_ms) {
      p = tip.back().position_mm;
    } else {
      // hand timestamps are non-decreasing, so the bracket only moves forward
      while (j + 1 < tip.size() && tip[j + 1].t_ms < h.t_ms) ++j;
      const auto& a = tip[j];
      const auto& b = tip[j + 1];
      const double span = b.t_ms - a.t_ms;
      const double s = span > 0.0 ? (h.t_ms - a.t_ms) / span : 1.0;
      p = a.position_mm + s * (b.position_mm - a.position_mm);
    }
    const double d = (h.position_mm - p).norm();
    sum_sq += d * d;
    out.max_mm = std::max(out.max_mm, d);
    out.aligned.push_back({h.t_ms, h.position_mm, p});
  }
  out.rms_mm = std::sqrt(sum_sq / static_cast<double>(hand.size()));
  return out;
}

LatencyStats latency_stats(std::span<const LatencyPair> log) {
  LatencyStats s;
  s.n = log.size();
  if (log.empty()) return s;
  std::vector<double> d;
  d.reserve(log.size());
  for (const auto& p : log) d.push_back(static_cast<double>(p.command_us - p.receive_us));
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  s.median_us = n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_us = d[std::max<std::size_t>(rank, 1) - 1];
  s.max_us = d.back();
  return s;
}

double task_timer(std::span<const TimedMarker> markers) {
  std::optional<double> start, end;
  for (const auto& m : markers) {
    if (m.name == "start" && !start) start = m.t_s;
    if (m.name == "end") end = m.t_s;
  }
  if (!start) throw Error(ErrorCode::kMissingMarker, "no start marker");
  if (!end) throw Error(ErrorCode::kMissingMarker, "no end marker");
  return *end - *start;
}

ErrorSummary summarize_errors(std::span<const double> errors_mm) {
  ErrorSummary s;
  s.n = errors_mm.size();
  if (errors_mm.empty()) return s;
  double sum = 0.0;
  for (double e : errors_mm) {
    sum += e;
    s.max_mm = std::max(s.max_mm, e);
  }
  s.mean_mm = sum / static_cast<double>(s.n);
  return s;
}

nlohmann::json to_json(const TaskReport& r) {
  nlohmann::json j;
  j["report_version"] = kReportVersion;
  j["task"] = r.task;
  j["seed"] = r.seed;
  j["positional_error_mm"] = {
      {"mean", r.positional_error.mean_mm}, {"max", r.positional_error.max_mm},
      {"n", r.positional_error.n}};
  j["checkpoint_errors_mm"] = r.checkpoint_errors_mm;
  j["trajectory_rms_mm"] = r.trajectory_rms_mm;
  j["trajectory_max_mm"] = r.trajectory_max_mm;
  j["latency_us"] = {{"median", r.latency.median_us}, {"p95", r.latency.p95_us},
                     {"max", r.latency.max_us},       {"n", r.latency.n},
                     {"clock", r.latency_clock}};
  j["duration_s"] = r.duration_s;
  j["samples"] = {{"wrist", r.wrist_samples}, {"commands", r.stream_commands}, {"ticks", r.ticks}};
  j["gating_violations"] = r.gating_violations;
  j["ik_skips"] = r.ik_skips;
  j["rcm_max_distance_mm"] =
      r.rcm_max_distance_mm ? nlohmann::json(*r.rcm_max_distance_mm) : nlohmann::json(nullptr);
  j["insertion_depth_mm"] =
      r.insertion_depth_mm ? nlohmann::json(*r.insertion_depth_mm) : nlohmann::json(nullptr);
  j["errors"] = r.errors;
  return j;
}

void write_trajectory_csv(std::ostream& os, const std::vector<AlignedPair>& aligned) {
  os << "t_ms,hand_x,hand_y,hand_z,tip_x,tip_y,tip_z\n";
  char buf[256];
  for (const auto& a : aligned) {
    std::snprintf(buf, sizeof buf, "%.3f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", a.t_ms, a.hand_mm.x(),
                  a.hand_mm.y(), a.hand_mm.z(), a.tip_mm.x(), a.tip_mm.y(), a.tip_mm.z());
    os << buf;
  }
}

std::vector<AlignedPair> read_trajectory_csv(std::istream& is) {
  std::vector<AlignedPair> out;
  std::string line;
  if (!std::getline(is, line) || line.rfind("t_ms,", 0) != 0) {
    throw Error(ErrorCode::kBadConfig, "missing trajectory CSV header");
  }
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    double v[7];
    char comma = 0;
    for (int i = 0; i < 7; ++i) {
      if (!(ls >> v[i]) || (i < 6 && !(ls >> comma) ) || (i < 6 && comma != ',')) {
        throw Error(ErrorCode::kBadConfig, "malformed CSV row " + std::to_string(row));
      }
    }
    out.push_back({v[0], {v[1], v[2], v[3]}, {v[4], v[5], v[6]}});
  }
  return out;
}

}  // namespace teleop
