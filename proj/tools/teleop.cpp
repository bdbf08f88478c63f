// teleop: serve, gen-task, replay, calibrate, plot.
#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "teleop/calibration.hpp"
#include "teleop/config.hpp"
#include "teleop/plot.hpp"
#include "teleop/server.hpp"
#include "teleop/tasks.hpp"

using namespace teleop;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitBadInput = 2;

int fail(const std::string& code, const std::string& detail, int exit_code) {
  std::cerr << nlohmann::json{{"error", code}, {"detail", detail}}.dump() << std::endl;
  return exit_code;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBadConfig:
    case ErrorCode::kUnknownTask:
    case ErrorCode::kScriptViolation:
    case ErrorCode::kTooFewPairs:
    case ErrorCode::kDegenerateGeometry:
    case ErrorCode::kMalformedJson:
    case ErrorCode::kMissingField:
    case ErrorCode::kUnknownType:
    case ErrorCode::kEmptySeries:
      return kExitBadInput;
    default:
      return kExitRuntime;
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kBadConfig, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::kBadConfig, "write failed for " + path);
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int cmd_serve(const std::string& listen, const std::string& config_path,
              const std::string& calibration_path, const std::string& record_path) {
  const TeleopConfig config = config_path.empty() ? TeleopConfig{} : load_config(config_path);
  const RigidTransform calibration =
      calibration_path.empty() ? RigidTransform::identity() : load_calibration(calibration_path);
  auto [host, port] = parse_listen_address(listen);
  ServerOptions options;
  options.host = host;
  options.port = port;
  if (!record_path.empty()) options.record_path = record_path;

  // Block termination signals before any thread starts so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Server server(config, calibration, options);
  std::cerr << nlohmann::json{{"listening", host + ":" + std::to_string(server.port())}}.dump()
            << std::endl;
  server.start();
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  return 0;
}

int cmd_gen_task(int task, std::uint64_t seed, const std::string& out) {
  const TaskScript script = gen_task(task, seed);
  write_file(out, serialize_script(script));
  return 0;
}

int cmd_replay(const std::string& script_path, const std::string& report_path,
               const std::string& csv_path, const std::string& config_path, bool wall_clock) {
  ReplayOptions options;
  if (!config_path.empty()) options.config = load_config(config_path);
  options.wall_clock_latency = wall_clock;
  const ReplayResult result = replay(load_script(script_path), options);
  const std::string report = to_json(result.report).dump(2) + "\n";
  if (report_path.empty()) {
    std::cout << report;
  } else {
    write_file(report_path, report);
  }
  if (!csv_path.empty()) {
    std::ostringstream csv;
    write_trajectory_csv(csv, result.aligned);
    write_file(csv_path, csv.str());
  }
  return 0;
}

int cmd_calibrate(const std::string& pairs_path, const std::string& out) {
  const PointPairSet pairs = load_point_pairs(pairs_path);
  const Registration reg = register_frames(pairs);
  std::vector<MarkerPoint> markers;
  for (const auto& p : pairs.pairs) markers.push_back({p.operator_m, p.robot_mm, std::nullopt, p.label});
  const CalibrationReport check = verify_calibration(ArmModel::kuka_like(), reg.transform, markers);
  write_file(out, calibration_to_json(reg, utc_timestamp()).dump(2) + "\n");
  std::cout << nlohmann::json{{"n_pairs", reg.n_pairs},
                              {"residual_rms_mm", reg.residual_rms_mm},
                              {"residual_max_mm", reg.residual_max_mm},
                              {"verify_mean_mm", check.mean_mm},
                              {"verify_max_mm", check.max_mm}}
                   .dump()
            << std::endl;
  return 0;
}

int cmd_plot(const std::string& csv_path, const std::string& out) {
  std::ifstream in(csv_path);
  if (!in) throw Error(ErrorCode::kBadConfig, "cannot open " + csv_path);
  write_file(out, render_trajectory_svg(read_trajectory_csv(in)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gesture-gated teleoperation server and task tools"};
  app.require_subcommand(1);

  std::string listen = "0.0.0.0:" + std::to_string(kDefaultPort), config_path, calibration_path,
              record_path;
  auto* serve = app.add_subcommand("serve", "Run the teleoperation server");
  serve->add_option("--listen", listen, "host:port to listen on");
  serve->add_option("--config", config_path, "Server config JSON");
  serve->add_option("--calibration", calibration_path, "calibration.json (identity when omitted)");
  serve->add_option("--record", record_path, "Write every message to this JSONL file");

  int task = 0;
  std::uint64_t seed = 0;
  std::string out;
  auto* gen = app.add_subcommand("gen-task", "Generate a deterministic task script");
  gen->add_option("--task", task, "1, 2 or 3")->required();
  gen->add_option("--seed", seed, "RNG seed");
  gen->add_option("--out", out, "Script file")->required();

  std::string script_path, report_path, csv_path;
  bool wall_clock = false;
  auto* rep = app.add_subcommand("replay", "Replay a task script on simulated time");
  rep->add_option("script", script_path, "Task script")->required();
  rep->add_option("--report", report_path, "Report JSON (stdout when omitted)");
  rep->add_option("--csv", csv_path, "Aligned hand/tip trajectory CSV");
  rep->add_option("--config", config_path, "Server config JSON");
  rep->add_flag("--wall-clock", wall_clock, "Report latency on the host clock");

  std::string pairs_path;
  auto* cal = app.add_subcommand("calibrate", "Register operator and robot frames");
  cal->add_option("--pairs", pairs_path, "pairs.json")->required();
  cal->add_option("--out", out, "calibration.json")->required();

  auto* plot = app.add_subcommand("plot", "Render a trajectory CSV as SVG");
  plot->add_option("--csv", csv_path, "Trajectory CSV")->required();
  plot->add_option("--out", out, "SVG file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("Usage", e.what(), kExitBadInput);
  }

  try {
    if (*serve) return cmd_serve(listen, config_path, calibration_path, record_path);
    if (*gen) return cmd_gen_task(task, seed, out);
    if (*rep) return cmd_replay(script_path, report_path, csv_path, config_path, wall_clock);
    if (*cal) return cmd_calibrate(pairs_path, out);
    if (*plot) return cmd_plot(csv_path, out);
  } catch (const Error& e) {
    return fail(std::string(to_string(e.code())), e.detail(), exit_code_for(e.code()));
  } catch (const std::exception& e) {
    return fail("Internal", e.what(), kExitRuntime);
  }
  return kExitRuntime;
}
