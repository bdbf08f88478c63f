#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "teleop/calibration.hpp"
#include "teleop/config.hpp"
#include "teleop/metrics.hpp"

namespace teleop {

struct ServerOptions {
  std::string host = "0.0.0.0";
  int port = kDefaultPort;  // 0 picks a free port
  std::optional<std::string> record_path;
  // Slow consumers are dropped once this many frames are queued for them.
  std::size_t max_queued_frames = 4096;
};

// NDJSON over TCP plus a WebSocket bridge at /ws on the same port (one JSON
// message per text frame). All I/O, session events and simulator ticks run on
// one io_context thread, so the runtime sees a single total order.
class Server {
 public:
  // Binds immediately; throws BindFailure.
  Server(const TeleopConfig& config, const RigidTransform& calibration,
         const ServerOptions& options = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  int port() const;
  // Blocks until stop().
  void run();
  // Runs on a background thread.
  void start();
  void stop();

  // Decode-to-command latency pairs gathered so far (thread-safe snapshot).
  std::vector<LatencyPair> latency_log() const;
  std::uint64_t ticks() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Splits "host:port" (or a bare port); throws BadConfig.
std::pair<std::string, int> parse_listen_address(const std::string& addr);

}  // namespace teleop
