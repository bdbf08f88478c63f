#include "teleop/protocol.hpp"

#include <nlohmann/json.hpp>

#include "teleop/error.hpp"

namespace teleop {
namespace {

using nlohmann::json;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

[[noreturn]] void missing(const char* field) {
  throw Error(ErrorCode::kMissingField, std::string("field '") + field + "' missing or mistyped");
}

const json& field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) missing(name);
  return *it;
}

std::string get_string(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_string()) missing(name);
  return v.get<std::string>();
}

double get_double(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number()) missing(name);
  return v.get<double>();
}

std::int64_t get_int(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number_integer()) missing(name);
  return v.get<std::int64_t>();
}

std::uint64_t get_uint(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number_unsigned()) missing(name);
  return v.get<std::uint64_t>();
}

bool get_bool(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_boolean()) missing(name);
  return v.get<bool>();
}

template <std::size_t N>
std::array<double, N> get_array(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_array() || v.size() != N) missing(name);
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!v[i].is_number()) missing(name);
    out[i] = v[i].get<double>();
  }
  return out;
}

template <class T, class Getter>
std::optional<T> get_optional(const json& j, const char* name, Getter getter) {
  const auto it = j.find(name);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return getter(j, name);
}

}  // namespace

std::string_view type_tag(const WireMessage& msg) {
  return std::visit(
      Overloaded{
          [](const Hello&) { return "hello"; },
          [](const HelloAck&) { return "hello_ack"; },
          [](const PinchStart&) { return "pinch_start"; },
          [](const WristSample&) { return "wrist"; },
          [](const PinchEnd&) { return "pinch_end"; },
          [](const MoveSummary&) { return "move_summary"; },
          [](const Validate&) { return "validate"; },
          [](const StateBroadcast&) { return "state"; },
          [](const ConfigSet&) { return "config_set"; },
          [](const ErrorMsg&) { return "error"; },
      },
      msg);
}

json to_json(const WireMessage& msg) {
  json j = std::visit(
      Overloaded{
          [](const Hello& m) -> json { return {{"client_id", m.client_id}, {"role", m.role}}; },
          [](const HelloAck& m) -> json {
            return {{"session_id", m.session_id}, {"server_version", m.server_version}};
          },
          [](const PinchStart& m) -> json { return {{"t_client_ms", m.t_client_ms}}; },
          [](const WristSample& m) -> json {
            return {{"seq", m.seq}, {"t_client_ms", m.t_client_ms},
                    {"x_m", m.x_m}, {"y_m", m.y_m}, {"z_m", m.z_m}};
          },
          [](const PinchEnd& m) -> json {
            return {{"t_client_ms", m.t_client_ms}, {"last_seq", m.last_seq}};
          },
          [](const MoveSummary& m) -> json {
            return {{"move_id", m.move_id}, {"n_samples", m.n_samples},
                    {"tip_start_mm", m.tip_start_mm}, {"tip_end_mm", m.tip_end_mm}};
          },
          [](const Validate& m) -> json {
            return {{"move_id", m.move_id}, {"accepted", m.accepted}};
          },
          [](const StateBroadcast& m) -> json {
            json e = m.engaged_client ? json(*m.engaged_client) : json(nullptr);
            return {{"tick", m.tick}, {"joints_rad", m.joints_rad}, {"tip_mm", m.tip_mm},
                    {"mode", m.mode}, {"engaged_client", e}};
          },
          [](const ConfigSet& m) -> json {
            json o = json::object();
            if (m.scale) o["scale"] = *m.scale;
            if (m.insert_increment_mm) o["insert_increment_mm"] = *m.insert_increment_mm;
            if (m.insert_velocity_mm_s) o["insert_velocity_mm_s"] = *m.insert_velocity_mm_s;
            if (m.standoff_mm) o["standoff_mm"] = *m.standoff_mm;
            if (m.approach_trocar_mm) o["approach_trocar_mm"] = *m.approach_trocar_mm;
            if (m.approach_dir) o["approach_dir"] = *m.approach_dir;
            if (m.insert) o["insert"] = *m.insert;
            if (m.mode) o["mode"] = *m.mode;
            return o;
          },
          [](const ErrorMsg& m) -> json { return {{"code", m.code}, {"detail", m.detail}}; },
      },
      msg);
  j["type"] = type_tag(msg);
  return j;
}

WireMessage from_json(const json& j) {
  const std::string type = get_string(j, "type");
  if (type == "hello") return Hello{get_string(j, "client_id"), get_string(j, "role")};
  if (type == "hello_ack") {
    return HelloAck{get_string(j, "session_id"), get_string(j, "server_version")};
  }
  if (type == "pinch_start") return PinchStart{get_int(j, "t_client_ms")};
  if (type == "wrist") {
    return WristSample{get_uint(j, "seq"), get_int(j, "t_client_ms"), get_double(j, "x_m"),
                       get_double(j, "y_m"), get_double(j, "z_m")};
  }
  if (type == "pinch_end") return PinchEnd{get_int(j, "t_client_ms"), get_uint(j, "last_seq")};
  if (type == "move_summary") {
    return MoveSummary{get_uint(j, "move_id"), get_uint(j, "n_samples"),
                       get_array<3>(j, "tip_start_mm"), get_array<3>(j, "tip_end_mm")};
  }
  if (type == "validate") return Validate{get_uint(j, "move_id"), get_bool(j, "accepted")};
  if (type == "state") {
    StateBroadcast m;
    m.tick = get_uint(j, "tick");
    m.joints_rad = get_array<7>(j, "joints_rad");
    m.tip_mm = get_array<3>(j, "tip_mm");
    m.mode = get_string(j, "mode");
    m.engaged_client = get_optional<std::string>(j, "engaged_client", get_string);
    return m;
  }
  if (type == "config_set") {
    ConfigSet m;
    m.scale = get_optional<double>(j, "scale", get_double);
    m.insert_increment_mm = get_optional<double>(j, "insert_increment_mm", get_double);
    m.insert_velocity_mm_s = get_optional<double>(j, "insert_velocity_mm_s", get_double);
    m.standoff_mm = get_optional<double>(j, "standoff_mm", get_double);
    m.approach_trocar_mm =
        get_optional<std::array<double, 3>>(j, "approach_trocar_mm", get_array<3>);
    m.approach_dir = get_optional<std::array<double, 3>>(j, "approach_dir", get_array<3>);
    m.insert = get_optional<std::string>(j, "insert", get_string);
    m.mode = get_optional<std::string>(j, "mode", get_string);
    return m;
  }
  if (type == "error") return ErrorMsg{get_string(j, "code"), get_string(j, "detail")};
  throw Error(ErrorCode::kUnknownType, "unknown message type '" + type + "'");
}

std::string encode(const WireMessage& msg) {
  std::string line = to_json(msg).dump();
  line.push_back('\n');
  if (line.size() > kMaxFrameBytes) {
    throw Error(ErrorCode::kOversizeFrame,
                "encoded frame is " + std::to_string(line.size()) + " bytes");
  }
  return line;
}

WireMessage decode(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::kMalformedJson, "frame is not a JSON object");
  }
  return from_json(j);
}

std::vector<std::string> FrameBuffer::feed(std::string_view bytes) {
  std::vector<std::string> frames;
  std::size_t start = 0;
  while (start < bytes.size()) {
    const std::size_t lf = bytes.find('\n', start);
    const std::size_t end = lf == std::string_view::npos ? bytes.size() : lf;
    pending_.append(bytes.substr(start, end - start));
    if (pending_.size() + 1 > kMaxFrameBytes) {
      throw Error(ErrorCode::kOversizeFrame, "incoming frame exceeds 65536 bytes");
    }
    if (lf == std::string_view::npos) break;
    frames.push_back(std::move(pending_));
    pending_.clear();
    start = lf + 1;
  }
  return frames;
}

Hello handshake_verdict(const std::optional<std::string>& first_frame) {
  if (!first_frame) {
    throw Error(ErrorCode::kHandshakeTimeout, "no hello within the handshake deadline");
  }
  WireMessage msg;
  try {
    msg = decode(*first_frame);
  } catch (const Error& e) {
    throw Error(ErrorCode::kProtocolViolation, "first frame rejected: " + e.detail());
  }
  if (const auto* hello = std::get_if<Hello>(&msg)) return *hello;
  throw Error(ErrorCode::kProtocolViolation,
              "first message must be hello, got " + std::string(type_tag(msg)));
}

PinchGate::Verdict PinchGate::observe(const WireMessage& msg) {
  if (std::holds_alternative<PinchStart>(msg)) {
    if (open_) return Verdict::kGatingViolation;
    open_ = true;
    have_seq_ = false;
    samples_ = 0;
    return Verdict::kPass;
  }
  if (std::holds_alternative<PinchEnd>(msg)) {
    if (!open_) return Verdict::kGatingViolation;
    open_ = false;
    return Verdict::kPass;
  }
  if (const auto* s = std::get_if<WristSample>(&msg)) {
    if (!open_) return Verdict::kGatingViolation;
    if (have_seq_ && s->seq <= last_seq_) return Verdict::kSequenceViolation;
    have_seq_ = true;
    last_seq_ = s->seq;
    ++samples_;
    return Verdict::kPass;
  }
  return Verdict::kPass;
}

}  // namespace teleop
