#pragma once

// Wire protocol. Control messages are compact JSON text ({"a":"W"}); frames
// are length-prefixed little-endian binary:
//
//   u32 length (bytes after this field)
//   "PMFM" u8 version u8 action u8 kind u8 reserved
//   u64 round  f64 root[3]  u32 point_count  u32 dropped
//   f32 payload[point_count * stride(kind)]
//
// stride is 3 for points (world x,y,z) and 14 for splats (x,y,z, color[3],
// scaling[3], rotation w,x,y,z, opacity).

#include "avsim/core.hpp"
#include "avsim/rollout.hpp"
#include "avsim/splat.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace avsim::protocol {

inline constexpr std::uint8_t kVersion = 1;

enum class PayloadKind : std::uint8_t { Points = 0, Splats = 1 };

std::size_t stride(PayloadKind kind);
std::optional<PayloadKind> parse_kind(const std::string& text);  // "points" | "splats"

struct FrameMessage {
  std::uint64_t round = 0;
  ActionLabel action = ActionLabel::Idle;
  Vec3 world_root = Vec3::Zero();
  PayloadKind kind = PayloadKind::Points;
  std::uint32_t point_count = 0;
  std::uint32_t dropped = 0;  // actions coalesced away on this stream so far
  std::vector<float> payload;

  void validate() const;  // payload length matches point_count and kind
};

bool operator==(const FrameMessage& a, const FrameMessage& b);

std::vector<std::uint8_t> encode_frame(const FrameMessage& message);
// Accepts exactly one message including its length prefix.
FrameMessage decode_frame(std::span<const std::uint8_t> bytes);

FrameMessage points_message(const rollout::WorldFrame& frame, std::uint32_t dropped = 0);
FrameMessage splats_message(const rollout::WorldFrame& frame, const splat::GaussianSplatSet& set,
                            std::uint32_t dropped = 0);

// {"a":"W"} -> Forward. Throws UnknownAction / InvalidArgument.
ActionLabel parse_control(const std::string& text);
std::string control_message(ActionLabel action);

// ---- minimal RFC 6455 framing ----

namespace ws {

enum class Opcode : std::uint8_t {
  Continuation = 0x0,
  Text = 0x1,
  Binary = 0x2,
  Close = 0x8,
  Ping = 0x9,
  Pong = 0xA,
};

struct Frame {
  bool fin = true;
  Opcode opcode = Opcode::Binary;
  std::vector<std::uint8_t> payload;  // unmasked
};

// Sec-WebSocket-Accept for a client key.
std::string accept_key(const std::string& client_key);

// Server frames are unmasked; client frames must carry `mask`.
std::vector<std::uint8_t> encode(const Frame& frame, std::optional<std::array<std::uint8_t, 4>> mask = {});

// Parses one frame from the front of `bytes`. Returns the frame and the
// number of bytes consumed, or nullopt when more bytes are needed.
struct Parsed {
  Frame frame;
  std::size_t consumed = 0;
  bool masked = false;
};
std::optional<Parsed> decode(std::span<const std::uint8_t> bytes, std::size_t max_payload = 1 << 24);

}  // namespace ws

}  // namespace avsim::protocol
