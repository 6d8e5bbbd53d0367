#include "doctest.h"

#include "avsim/protocol.hpp"
#include "avsim/server.hpp"
#include "avsim/service.hpp"

#include "support.hpp"

#include "httplib.h"
#include "json.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <cstring>
#include <functional>
#include <thread>

using namespace avsim;
using namespace avsim::service;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an avsim::Error");
  return ErrorCode::Io;
}

struct AvatarDir {
  testing::TempDir dir;
  std::string path = dir.file("mini");
  AvatarDir() {
    synth::AvatarBuildOptions opts;
    opts.components = 16;
    opts.upscale = 2;
    opts.training_script = "10W,8A,10S,6I";
    opts.training_repeat = 1;
    synth::write_avatar_dir(path, "mini", opts);
  }
};

const AvatarDir& avatar_dir() {
  static const AvatarDir d;
  return d;
}

assets::EngineConfig engine_config() {
  assets::EngineConfig c;
  c.avatars["mini"] = avatar_dir().path;
  return c;
}

struct FakeClock {
  std::shared_ptr<Clock::time_point> now =
      std::make_shared<Clock::time_point>(Clock::now());
  ClockFn fn() const {
    return [n = now] { return *n; };
  }
  void advance(double seconds) {
    *now += std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds));
  }
};

// Minimal blocking WebSocket client over a raw socket.
class WsClient {
 public:
  WsClient(int port, const std::string& path) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    timeval tv{5, 0};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    const std::string key = "dGhlIHNhbXBsZSBub25jZQ==";
    send_raw("GET " + path + " HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
             "Sec-WebSocket-Key: " + key + "\r\nSec-WebSocket-Version: 13\r\n\r\n");
    while (response_.find("\r\n\r\n") == std::string::npos) {
      char buf[512];
      const auto n = ::recv(fd_, buf, sizeof buf, 0);
      if (n <= 0) break;
      response_.append(buf, std::size_t(n));
    }
    const auto end = response_.find("\r\n\r\n");
    if (end != std::string::npos) {
      pending_.assign(response_.begin() + long(end) + 4, response_.end());
      response_.resize(end);
    }
  }
  ~WsClient() { ::close(fd_); }

  const std::string& response() const { return response_; }

  void send_raw(const std::string& s) { ::send(fd_, s.data(), s.size(), MSG_NOSIGNAL); }
  void send_frame(protocol::ws::Opcode op, const std::string& payload, bool masked = true) {
    protocol::ws::Frame f;
    f.opcode = op;
    f.payload.assign(payload.begin(), payload.end());
    const auto bytes = protocol::ws::encode(f, masked ? std::optional(std::array<std::uint8_t, 4>{1, 2, 3, 4}) : std::nullopt);
    send_raw(std::string(bytes.begin(), bytes.end()));
  }

  // Next frame, or nullopt when the connection closes or times out.
  std::optional<protocol::ws::Frame> next() {
    for (;;) {
      if (auto p = protocol::ws::decode(pending_)) {
        pending_.erase(pending_.begin(), pending_.begin() + long(p->consumed));
        return p->frame;
      }
      std::uint8_t buf[65536];
      const auto n = ::recv(fd_, buf, sizeof buf, 0);
      if (n <= 0) return std::nullopt;
      pending_.insert(pending_.end(), buf, buf + n);
    }
  }

 private:
  int fd_ = -1;
  std::string response_;
  std::vector<std::uint8_t> pending_;
};

}  // namespace

TEST_CASE("frame messages have the documented byte layout") {
  protocol::FrameMessage m;
  m.round = 7;
  m.action = ActionLabel::Right;
  m.world_root = Vec3(1.5, -2.0, 0.25);
  m.point_count = 2;
  m.dropped = 3;
  m.payload = {1, 2, 3, 4, 5, 6};
  const auto b = protocol::encode_frame(m);
  REQUIRE(b.size() == 4 + 4 + 4 + 8 + 24 + 4 + 4 + 24);
  std::uint32_t len;
  std::memcpy(&len, b.data(), 4);
  CHECK(len == b.size() - 4);
  CHECK(std::string(b.begin() + 4, b.begin() + 8) == "PMFM");
  CHECK(b[8] == protocol::kVersion);
  CHECK(b[9] == 'D');
  CHECK(b[10] == 0);
  std::uint64_t round;
  std::memcpy(&round, b.data() + 12, 8);
  CHECK(round == 7);
  double y;
  std::memcpy(&y, b.data() + 28, 8);
  CHECK(y == -2.0);
  float last;
  std::memcpy(&last, b.data() + b.size() - 4, 4);
  CHECK(last == 6.0f);
  CHECK(protocol::decode_frame(b) == m);

  auto bad = b;
  bad.pop_back();
  CHECK(code_of([&] { protocol::decode_frame(bad); }) == ErrorCode::MalformedFile);
  m.payload.pop_back();
  CHECK(code_of([&] { m.validate(); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("control messages") {
  CHECK(protocol::parse_control("{\"a\":\"W\"}") == ActionLabel::Forward);
  CHECK(protocol::parse_control("{\"a\":\"I\"}") == ActionLabel::Idle);
  CHECK(protocol::parse_control(protocol::control_message(ActionLabel::Left)) == ActionLabel::Left);
  CHECK(code_of([] { protocol::parse_control("{\"a\":\"Q\"}"); }) == ErrorCode::UnknownAction);
  CHECK(code_of([] { protocol::parse_control("nope"); }) == ErrorCode::InvalidArgument);
  CHECK(protocol::parse_kind("splats") == protocol::PayloadKind::Splats);
  CHECK_FALSE(protocol::parse_kind("mesh").has_value());
}

TEST_CASE("websocket framing") {
  CHECK(protocol::ws::accept_key("dGhlIHNhbXBsZSBub25jZQ==") == "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
  protocol::ws::Frame f;
  f.opcode = protocol::ws::Opcode::Text;
  f.payload = {'H', 'e', 'l', 'l', 'o'};
  // RFC 6455 section 5.7 examples.
  CHECK(protocol::ws::encode(f) == std::vector<std::uint8_t>{0x81, 0x05, 0x48, 0x65, 0x6c, 0x6c, 0x6f});
  const auto masked = protocol::ws::encode(f, std::array<std::uint8_t, 4>{0x37, 0xfa, 0x21, 0x3d});
  CHECK(masked == std::vector<std::uint8_t>{0x81, 0x85, 0x37, 0xfa, 0x21, 0x3d, 0x7f, 0x9f, 0x4d, 0x51, 0x58});
  const auto p = protocol::ws::decode(masked);
  REQUIRE(p.has_value());
  CHECK(p->masked);
  CHECK(p->consumed == masked.size());
  CHECK(p->frame.payload == f.payload);
  CHECK_FALSE(protocol::ws::decode(std::span(masked).first(4)).has_value());

  f.payload.assign(70000, 7);
  const auto big = protocol::ws::encode(f);
  CHECK(big[1] == 127);
  CHECK(protocol::ws::decode(big)->frame.payload.size() == 70000);
  CHECK(code_of([&] { protocol::ws::decode(big, 1000); }) == ErrorCode::OutOfRange);
}

TEST_CASE("session lifecycle") {
  FakeClock clock;
  auto cfg = engine_config();
  cfg.limits.idle_timeout_seconds = 60;
  cfg.limits.max_sessions = 2;
  SessionManager m(cfg, clock.fn());

  const auto a = m.create_session("mini");
  CHECK(a.id.rfind("s1-", 0) == 0);
  CHECK(a.avatar_id == "mini");
  const auto f = m.step_session(a.id, ActionLabel::Forward);
  CHECK(f.round == 1);
  CHECK(f.point_count * 3 == f.payload.size());
  CHECK(m.describe(a.id).round == 1);
  CHECK(json::parse(to_json(m.describe(a.id)))["round"] == 1);

  CHECK(code_of([&] { m.create_session("ghost"); }) == ErrorCode::NotFound);
  CHECK(code_of([&] { m.create_session("../mini"); }) == ErrorCode::NotFound);
  const auto b = m.create_session("mini");
  CHECK(a.id != b.id);
  CHECK(code_of([&] { m.create_session("mini"); }) == ErrorCode::OutOfRange);
  CHECK(code_of([&] { m.step_session("nope", ActionLabel::Forward); }) == ErrorCode::NotFound);
  CHECK(code_of([&] { m.step_session(a.id, static_cast<ActionLabel>('q')); }) == ErrorCode::UnknownAction);

  m.close_session(b.id);
  CHECK(code_of([&] { m.step_session(b.id, ActionLabel::Forward); }) == ErrorCode::Expired);
  CHECK(m.session_count() == 1);

  clock.advance(61);
  CHECK(code_of([&] { m.describe(a.id); }) == ErrorCode::Expired);
  const auto c = m.create_session("mini");
  clock.advance(30);
  m.step_session(c.id, ActionLabel::Idle);  // activity resets the idle timer
  clock.advance(45);
  CHECK(m.reap_expired() == 0);
  clock.advance(20);
  CHECK(m.reap_expired() == 1);
  CHECK(code_of([&] { m.step_session(c.id, ActionLabel::Idle); }) == ErrorCode::Expired);
}

TEST_CASE("splat payloads") {
  SessionManager m(engine_config());
  const auto s = m.create_session("mini");
  const auto f = m.step_session(s.id, ActionLabel::Forward, protocol::PayloadKind::Splats);
  CHECK(f.kind == protocol::PayloadKind::Splats);
  CHECK(f.payload.size() == f.point_count * 14);
  const auto avatar = m.avatar("mini");
  CHECK(f.point_count == posmap::upscale_atlas(avatar->standing, avatar->upscale).foreground_count());
}

TEST_CASE("sessions with the same config step identically") {
  SessionManager m(engine_config());
  const auto a = m.create_session("mini"), b = m.create_session("mini");
  for (auto act : rollout::expand_script(rollout::parse_script("5W,3A,4S,2I"))) {
    CHECK(m.step_session(a.id, act) == m.step_session(b.id, act));
  }
}

TEST_CASE("action stream coalesces bursts") {
  SessionManager m(engine_config());
  const auto s = m.create_session("mini");
  std::vector<std::uint64_t> rounds;
  ActionStream stream(m, s.id, [&](const protocol::FrameMessage& f) { rounds.push_back(f.round); });
  for (int i = 0; i < 100; ++i) stream.push(ActionLabel::Forward);
  stream.drain();
  auto c = stream.counters();
  CHECK(c.sends == 100);
  CHECK(c.steps + c.dropped == c.sends);
  CHECK(c.errors == 0);
  CHECK(c.steps >= 1);
  for (std::size_t i = 0; i < rounds.size(); ++i) CHECK(rounds[i] == i + 1);
  stream.close();
  stream.push(ActionLabel::Forward);  // ignored after close
  CHECK(stream.counters().sends == 100);
}

TEST_CASE("action stream reports errors for closed sessions") {
  SessionManager m(engine_config());
  const auto s = m.create_session("mini");
  std::vector<ErrorCode> errors;
  ActionStream stream(m, s.id, {}, [&](const Error& e) { errors.push_back(e.code()); });
  m.close_session(s.id);
  stream.push(ActionLabel::Forward);
  stream.drain();
  stream.close();
  REQUIRE(errors.size() == 1);
  CHECK(errors[0] == ErrorCode::Expired);
  const auto c = stream.counters();
  CHECK(c.steps + c.dropped + c.errors == c.sends);
}

TEST_CASE("HTTP and WebSocket front end") {
  SessionManager m(engine_config());
  ServerOptions opts;
  opts.host = "127.0.0.1";
  opts.port = 0;
  opts.stream_port = 0;
  Server server(m, opts);
  server.start();
  httplib::Client http("127.0.0.1", server.port());

  auto health = http.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);

  auto avatars = http.Get("/avatars");
  REQUIRE(avatars);
  CHECK(json::parse(avatars->body) == json::array({"mini"}));
  auto manifest = http.Get("/avatars/mini/manifest.json");
  REQUIRE(manifest);
  CHECK(json::parse(manifest->body)["id"] == "mini");
  CHECK(http.Get("/avatars/ghost/manifest.json")->status == 404);

  auto created = http.Post("/sessions", R"({"avatar":"mini"})", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto info = json::parse(created->body);
  const std::string id = info["id"];
  CHECK(info["stream_port"] == server.stream_port());
  CHECK(http.Post("/sessions", R"({"avatar":"ghost"})", "application/json")->status == 404);
  CHECK(http.Post("/sessions", "[]", "application/json")->status == 400);

  auto stepped = http.Post("/sessions/" + id + "/step", R"({"a":"W"})", "application/json");
  REQUIRE(stepped);
  CHECK(stepped->status == 200);
  const auto frame = protocol::decode_frame(
      std::vector<std::uint8_t>(stepped->body.begin(), stepped->body.end()));
  CHECK(frame.round == 1);
  CHECK(frame.action == ActionLabel::Forward);
  CHECK(http.Post("/sessions/" + id + "/step", R"({"a":"X"})", "application/json")->status == 400);
  CHECK(json::parse(http.Get("/sessions/" + id)->body)["round"] == 1);

  {
    WsClient ws(server.stream_port(), "/sessions/" + id + "/stream");
    CHECK(ws.response().rfind("HTTP/1.1 101", 0) == 0);
    CHECK(ws.response().find("s3pPLMBiTxaQ9kYGzzhZRbK+xOo=") != std::string::npos);
    ws.send_frame(protocol::ws::Opcode::Text, R"({"a":"A"})");
    auto f = ws.next();
    REQUIRE(f.has_value());
    CHECK(f->opcode == protocol::ws::Opcode::Binary);
    const auto m2 = protocol::decode_frame(f->payload);
    CHECK(m2.round == 2);
    CHECK(m2.action == ActionLabel::Left);

    ws.send_frame(protocol::ws::Opcode::Text, R"({"a":"Z"})");
    f = ws.next();
    REQUIRE(f.has_value());
    CHECK(f->opcode == protocol::ws::Opcode::Text);
    CHECK(std::string(f->payload.begin(), f->payload.end()).find("unknown-action") != std::string::npos);

    ws.send_frame(protocol::ws::Opcode::Ping, "hi");
    f = ws.next();
    REQUIRE(f.has_value());
    CHECK(f->opcode == protocol::ws::Opcode::Pong);
  }
  {
    WsClient ws(server.stream_port(), "/sessions/" + id + "/stream");
    ws.send_frame(protocol::ws::Opcode::Text, R"({"a":"W"})", false);  // clients must mask
    auto f = ws.next();
    while (f && f->opcode != protocol::ws::Opcode::Close) f = ws.next();
    CHECK((!f || f->opcode == protocol::ws::Opcode::Close));
  }
  {
    WsClient ws(server.stream_port(), "/sessions/nope/stream");
    CHECK(ws.response().rfind("HTTP/1.1 404", 0) == 0);
  }

  auto del = http.Delete("/sessions/" + id);
  REQUIRE(del);
  CHECK(del->status == 204);
  CHECK(http.Get("/sessions/" + id)->status == 410);
  CHECK(http.Get("/sessions/unknown")->status == 404);
  server.stop();
}
