#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "teleop/error.hpp"
#include "teleop/protocol.hpp"

using namespace teleop;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kBadConfig;
}

// Hand-rolled message generator covering every variant.
class MessageGen {
 public:
  explicit MessageGen(std::uint64_t seed) : rng_(seed) {}

  WireMessage next() {
    switch (pick(10)) {
      case 0: return Hello{str(), str()};
      case 1: return HelloAck{str(), str()};
      case 2: return PinchStart{i64()};
      case 3: return WristSample{u64(), i64(), real(), real(), real()};
      case 4: return PinchEnd{i64(), u64()};
      case 5: return MoveSummary{u64(), u64(), arr<3>(), arr<3>()};
      case 6: return Validate{u64(), pick(2) == 1};
      case 7: {
        StateBroadcast s{u64(), arr<7>(), arr<3>(), str(), std::nullopt};
        if (pick(2)) s.engaged_client = str();
        return s;
      }
      case 8: {
        ConfigSet c;
        if (pick(2)) c.scale = real();
        if (pick(2)) c.insert_increment_mm = real();
        if (pick(2)) c.insert_velocity_mm_s = real();
        if (pick(2)) c.standoff_mm = real();
        if (pick(2)) c.approach_trocar_mm = arr<3>();
        if (pick(2)) c.approach_dir = arr<3>();
        if (pick(2)) c.insert = str();
        if (pick(2)) c.mode = str();
        return c;
      }
      default: return ErrorMsg{str(), str()};
    }
  }

 private:
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }
  std::uint64_t u64() {
    return pick(4) == 0 ? rng_() : std::uniform_int_distribution<std::uint64_t>(0, 1000)(rng_);
  }
  std::int64_t i64() { return static_cast<std::int64_t>(rng_()); }
  double real() {
    switch (pick(4)) {
      case 0: return 0.0;
      case 1: return std::uniform_real_distribution<double>(-1.0, 1.0)(rng_);
      case 2: return std::uniform_real_distribution<double>(-1e6, 1e6)(rng_);
      default: return std::ldexp(std::uniform_real_distribution<double>(-1, 1)(rng_), pick(200) - 100);
    }
  }
  template <std::size_t N>
  std::array<double, N> arr() {
    std::array<double, N> a{};
    for (auto& v : a) v = real();
    return a;
  }
  // Pieces include JSON escapes and multi-byte UTF-8.
  std::string str() {
    static const std::vector<std::string> pieces{
        "a", "Z", "0", " ", "_", "\"", "\\", "/", "\t", "\n", "{", "]", ":", "\xc3\xa9", "\xe2\x82\xac"};
    std::string s;
    for (int n = pick(12); n > 0; --n) s += pieces[static_cast<std::size_t>(pick(15))];
    return s;
  }

  std::mt19937_64 rng_;
};

}  // namespace

TEST(Encode, PinchStartCanonicalBytes) {
  EXPECT_EQ(encode(PinchStart{0}), "{\"t_client_ms\":0,\"type\":\"pinch_start\"}\n");
}

TEST(Encode, KeysSortedAndSingleLine) {
  const std::string line = encode(WristSample{3, 9, 0.5, -0.25, 1.0});
  EXPECT_EQ(line,
            "{\"seq\":3,\"t_client_ms\":9,\"type\":\"wrist\",\"x_m\":0.5,\"y_m\":-0.25,\"z_m\":1.0}\n");
  EXPECT_EQ(line.find('\n'), line.size() - 1);
}

TEST(Encode, StringsWithNewlinesStayOnOneLine) {
  const std::string line = encode(ErrorMsg{"Busy", "line1\nline2"});
  EXPECT_EQ(line.find('\n'), line.size() - 1);
}

TEST(Encode, OversizeFrame) {
  EXPECT_EQ(code_of([] { encode(ErrorMsg{"x", std::string(70000, 'a')}); }),
            ErrorCode::kOversizeFrame);
  // just under the bound still encodes
  const std::string base = encode(ErrorMsg{"x", ""});
  const std::string fits = encode(ErrorMsg{"x", std::string(kMaxFrameBytes - base.size(), 'a')});
  EXPECT_EQ(fits.size(), kMaxFrameBytes);
}

TEST(Decode, WristExample) {
  const WireMessage m =
      decode("{\"type\":\"wrist\",\"seq\":1,\"t_client_ms\":5,\"x_m\":0.1,\"y_m\":0.0,\"z_m\":0.2}\n");
  EXPECT_EQ(m, WireMessage(WristSample{1, 5, 0.1, 0.0, 0.2}));
}

TEST(Decode, UnknownExtraFieldsIgnored) {
  const WireMessage m = decode("{\"type\":\"validate\",\"move_id\":4,\"accepted\":true,\"x\":[1]}");
  EXPECT_EQ(m, WireMessage(Validate{4, true}));
}

TEST(Decode, Errors) {
  EXPECT_EQ(code_of([] { decode("{\"type\":\"bogus\"}\n"); }), ErrorCode::kUnknownType);
  EXPECT_EQ(code_of([] { decode("{\"seq\":1}\n"); }), ErrorCode::kMissingField);
  EXPECT_EQ(code_of([] { decode("{\"type\":\"wrist\",\"seq\":1}\n"); }), ErrorCode::kMissingField);
  EXPECT_EQ(code_of([] { decode("{\"type\":\"pinch_start\",\"t_client_ms\":\"soon\"}"); }),
            ErrorCode::kMissingField);
  EXPECT_EQ(code_of([] { decode("{\"type\":\"wrist\",\"seq\":1,"); }), ErrorCode::kMalformedJson);
  EXPECT_EQ(code_of([] { decode("[1,2,3]"); }), ErrorCode::kMalformedJson);
  EXPECT_EQ(code_of([] { decode(""); }), ErrorCode::kMalformedJson);
}

TEST(Decode, ErrorCodesRenderAsTheirNames) {
  try {
    decode("{\"type\":\"bogus\"}");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(to_string(e.code()), "UnknownType");
  }
}

TEST(RoundTrip, EveryVariantOverGeneratedMessages) {
  MessageGen gen(42);
  std::vector<int> seen(std::variant_size_v<WireMessage>, 0);
  for (int i = 0; i < 20000; ++i) {
    const WireMessage m = gen.next();
    ++seen[m.index()];
    const std::string bytes = encode(m);
    ASSERT_EQ(decode(bytes), m) << bytes;
    ASSERT_EQ(encode(m), bytes);  // deterministic
  }
  for (int n : seen) EXPECT_GT(n, 1000);
}

TEST(FrameBuffer, TruncatedLineYieldsNothingUntilLf) {
  FrameBuffer fb;
  EXPECT_TRUE(fb.feed("{\"type\":\"pinch_start\",").empty());
  EXPECT_EQ(fb.pending_bytes(), 22u);
  const auto frames = fb.feed("\"t_client_ms\":0}\n");
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(decode(frames[0]), WireMessage(PinchStart{0}));
  EXPECT_EQ(fb.pending_bytes(), 0u);
}

TEST(FrameBuffer, ArbitraryChunkingPreservesFrames) {
  MessageGen gen(7);
  std::mt19937_64 rng(8);
  std::vector<WireMessage> sent;
  std::string stream;
  for (int i = 0; i < 2000; ++i) {
    sent.push_back(gen.next());
    stream += encode(sent.back());
  }
  FrameBuffer fb;
  std::vector<WireMessage> got;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 300)(rng);
    for (const auto& f : fb.feed(std::string_view(stream).substr(pos, n))) got.push_back(decode(f));
    pos += n;
  }
  EXPECT_EQ(got, sent);
}

TEST(FrameBuffer, OversizeIncomingFrame) {
  FrameBuffer fb;
  EXPECT_EQ(code_of([&] { fb.feed(std::string(kMaxFrameBytes + 10, 'a')); }),
            ErrorCode::kOversizeFrame);
  FrameBuffer chunked;
  EXPECT_EQ(code_of([&] {
              for (int i = 0; i < 100; ++i) chunked.feed(std::string(1000, 'b'));
            }),
            ErrorCode::kOversizeFrame);
}

TEST(Handshake, HelloAdmits) {
  const Hello h = handshake_verdict(encode(Hello{"hl2-a", "operator"}));
  EXPECT_EQ(h.client_id, "hl2-a");
  EXPECT_EQ(h.role, "operator");
}

TEST(Handshake, NonHelloFirstIsViolation) {
  EXPECT_EQ(code_of([] { handshake_verdict(encode(WristSample{1, 0, 0, 0, 0})); }),
            ErrorCode::kProtocolViolation);
  EXPECT_EQ(code_of([] { handshake_verdict(std::string("not json")); }),
            ErrorCode::kProtocolViolation);
}

TEST(Handshake, SilenceTimesOut) {
  EXPECT_EQ(code_of([] { handshake_verdict(std::nullopt); }), ErrorCode::kHandshakeTimeout);
}

TEST(PinchGate, SamplesOutsideWindowAreViolations) {
  PinchGate g;
  using V = PinchGate::Verdict;
  EXPECT_EQ(g.observe(WristSample{1, 0, 0, 0, 0}), V::kGatingViolation);
  EXPECT_EQ(g.observe(PinchEnd{0, 0}), V::kGatingViolation);
  EXPECT_EQ(g.observe(PinchStart{0}), V::kPass);
  EXPECT_TRUE(g.open());
  EXPECT_EQ(g.observe(PinchStart{0}), V::kGatingViolation);
  EXPECT_EQ(g.observe(WristSample{5, 0, 0, 0, 0}), V::kPass);
  EXPECT_EQ(g.observe(WristSample{5, 0, 0, 0, 0}), V::kSequenceViolation);
  EXPECT_EQ(g.observe(WristSample{4, 0, 0, 0, 0}), V::kSequenceViolation);
  EXPECT_EQ(g.observe(WristSample{6, 0, 0, 0, 0}), V::kPass);
  EXPECT_EQ(g.samples_in_window(), 2u);
  EXPECT_EQ(g.observe(PinchEnd{0, 6}), V::kPass);
  EXPECT_EQ(g.observe(WristSample{7, 0, 0, 0, 0}), V::kGatingViolation);
  // a new pinch starts a fresh sequence
  EXPECT_EQ(g.observe(PinchStart{0}), V::kPass);
  EXPECT_EQ(g.observe(WristSample{1, 0, 0, 0, 0}), V::kPass);
}

// Random streams of pinch/wrist traffic: a sample passes only inside a window.
TEST(PinchGate, FuzzNeverPassesUngatedSamples) {
  std::mt19937_64 rng(12);
  for (int run = 0; run < 200; ++run) {
    PinchGate g;
    bool window = false;
    std::uint64_t seq = 0;
    for (int i = 0; i < 500; ++i) {
      const int k = std::uniform_int_distribution<int>(0, 9)(rng);
      if (k == 0) {
        const auto v = g.observe(PinchStart{0});
        EXPECT_EQ(v == PinchGate::Verdict::kPass, !window);
        window = true;
      } else if (k == 1) {
        const auto v = g.observe(PinchEnd{0, seq});
        EXPECT_EQ(v == PinchGate::Verdict::kPass, window);
        window = false;
      } else {
        seq += std::uniform_int_distribution<std::uint64_t>(0, 2)(rng);
        const auto v = g.observe(WristSample{seq, 0, 0, 0, 0});
        if (!window) EXPECT_EQ(v, PinchGate::Verdict::kGatingViolation);
        else EXPECT_NE(v, PinchGate::Verdict::kGatingViolation);
      }
    }
  }
}
