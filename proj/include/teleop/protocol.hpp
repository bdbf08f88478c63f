#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace teleop {

inline constexpr std::size_t kMaxFrameBytes = 65536;
inline constexpr int kDefaultPort = 7450;
inline constexpr const char* kServerVersion = "teleop/0.1";

struct Hello {
  std::string client_id;
  std::string role;
  bool operator==(const Hello&) const = default;
};

struct HelloAck {
  std::string session_id;
  std::string server_version;
  bool operator==(const HelloAck&) const = default;
};

struct PinchStart {
  std::int64_t t_client_ms = 0;
  bool operator==(const PinchStart&) const = default;
};

struct WristSample {
  std::uint64_t seq = 0;
  std::int64_t t_client_ms = 0;
  double x_m = 0.0;
  double y_m = 0.0;
  double z_m = 0.0;
  bool operator==(const WristSample&) const = default;
};

struct PinchEnd {
  std::int64_t t_client_ms = 0;
  std::uint64_t last_seq = 0;
  bool operator==(const PinchEnd&) const = default;
};

struct MoveSummary {
  std::uint64_t move_id = 0;
  std::uint64_t n_samples = 0;
  std::array<double, 3> tip_start_mm{};
  std::array<double, 3> tip_end_mm{};
  bool operator==(const MoveSummary&) const = default;
};

struct Validate {
  std::uint64_t move_id = 0;
  bool accepted = false;
  bool operator==(const Validate&) const = default;
};

struct StateBroadcast {
  std::uint64_t tick = 0;
  std::array<double, 7> joints_rad{};
  std::array<double, 3> tip_mm{};
  std::string mode;  // "free_space" | "approach" | "inserted"
  std::optional<std::string> engaged_client;
  bool operator==(const StateBroadcast&) const = default;
};

// Every field is optional; only the present ones change anything. Besides the
// tuning values it carries the explicit mode operations: trocar approach,
// one insertion increment ("in" / "out"), and leaving the trocar ("free_space").
struct ConfigSet {
  std::optional<double> scale;
  std::optional<double> insert_increment_mm;
  std::optional<double> insert_velocity_mm_s;
  std::optional<double> standoff_mm;
  std::optional<std::array<double, 3>> approach_trocar_mm;
  std::optional<std::array<double, 3>> approach_dir;
  std::optional<std::string> insert;
  std::optional<std::string> mode;
  bool operator==(const ConfigSet&) const = default;
};

struct ErrorMsg {
  std::string code;
  std::string detail;
  bool operator==(const ErrorMsg&) const = default;
};

using WireMessage = std::variant<Hello, HelloAck, PinchStart, WristSample, PinchEnd, MoveSummary,
                                 Validate, StateBroadcast, ConfigSet, ErrorMsg>;

std::string_view type_tag(const WireMessage& msg);

nlohmann::json to_json(const WireMessage& msg);
// Throws UnknownType / MissingField.
WireMessage from_json(const nlohmann::json& j);

// One LF-terminated JSON line with sorted keys. Throws OversizeFrame.
std::string encode(const WireMessage& msg);
// Accepts a line with or without its trailing LF.
// Throws MalformedJson, UnknownType or MissingField.
WireMessage decode(std::string_view line);

// Reassembles LF-delimited frames from arbitrary stream chunks.
class FrameBuffer {
 public:
  // Returns the complete frames (without LF) found so far. Throws OversizeFrame
  // once a frame grows past kMaxFrameBytes; the buffer is then unusable.
  std::vector<std::string> feed(std::string_view bytes);
  std::size_t pending_bytes() const { return pending_.size(); }

 private:
  std::string pending_;
};

// Decides admission from the first frame of a connection. nullopt means the
// deadline passed without a frame. Returns the Hello on success, otherwise
// throws HandshakeTimeout or ProtocolViolation.
Hello handshake_verdict(const std::optional<std::string>& first_frame);

// Per-client pinch window tracking. Wrist samples only count as motion input
// between PinchStart and PinchEnd, with strictly increasing seq.
class PinchGate {
 public:
  enum class Verdict { kPass, kGatingViolation, kSequenceViolation };

  Verdict observe(const WireMessage& msg);
  bool open() const { return open_; }
  std::uint64_t samples_in_window() const { return samples_; }

 private:
  bool open_ = false;
  bool have_seq_ = false;
  std::uint64_t last_seq_ = 0;
  std::uint64_t samples_ = 0;
};

}  // namespace teleop
