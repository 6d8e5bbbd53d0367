#include "avsim/protocol.hpp"

#include "binio.hpp"
#include "json.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <cstring>
#include <limits>

namespace avsim::protocol {

namespace {

constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 24 + 4 + 4;  // after the length prefix

}  // namespace

std::size_t stride(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::Points: return 3;
    case PayloadKind::Splats: return splat::kChannels;
  }
  fail(ErrorCode::InvalidArgument, "unknown payload kind");
}

std::optional<PayloadKind> parse_kind(const std::string& text) {
  if (text == "points") return PayloadKind::Points;
  if (text == "splats") return PayloadKind::Splats;
  return std::nullopt;
}

void FrameMessage::validate() const {
  if (!is_valid_action(action)) fail(ErrorCode::UnknownAction, "frame message action");
  if (payload.size() != static_cast<std::size_t>(point_count) * stride(kind)) {
    fail(ErrorCode::ShapeMismatch, "frame payload has " + std::to_string(payload.size()) +
                                       " floats for " + std::to_string(point_count) + " points");
  }
}

bool operator==(const FrameMessage& a, const FrameMessage& b) {
  return encode_frame(a) == encode_frame(b);
}

std::vector<std::uint8_t> encode_frame(const FrameMessage& m) {
  m.validate();
  const std::size_t body = kHeaderBytes + m.payload.size() * sizeof(float);
  if (body > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorCode::OutOfRange, "frame message exceeds 4 GiB");
  }
  binio::Writer w;
  w.data().reserve(4 + body);
  w.u32(static_cast<std::uint32_t>(body));
  w.magic("PMFM");
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(m.action));
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.u8(0);
  w.u64(m.round);
  for (int i = 0; i < 3; ++i) w.f64(m.world_root[i]);
  w.u32(m.point_count);
  w.u32(m.dropped);
  w.bytes(m.payload.data(), m.payload.size() * sizeof(float));
  return std::move(w.data());
}

FrameMessage decode_frame(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "frame message");
  const std::uint32_t body = r.u32();
  if (body != r.remaining()) {
    fail(ErrorCode::MalformedFile, "frame message: length prefix " + std::to_string(body) +
                                       " but " + std::to_string(r.remaining()) + " bytes follow");
  }
  r.expect_magic("PMFM");
  if (r.u8() != kVersion) fail(ErrorCode::MalformedFile, "frame message: unsupported version");
  FrameMessage m;
  m.action = static_cast<ActionLabel>(r.u8());
  if (!is_valid_action(m.action)) fail(ErrorCode::UnknownAction, "frame message action");
  const std::uint8_t kind = r.u8();
  if (kind > 1) fail(ErrorCode::MalformedFile, "frame message: unknown payload kind");
  m.kind = static_cast<PayloadKind>(kind);
  r.u8();
  m.round = r.u64();
  for (int i = 0; i < 3; ++i) m.world_root[i] = r.f64();
  m.point_count = r.u32();
  m.dropped = r.u32();
  const std::size_t floats = static_cast<std::size_t>(m.point_count) * stride(m.kind);
  if (r.remaining() != floats * sizeof(float)) {
    fail(ErrorCode::MalformedFile, "frame message: payload length inconsistent with point count");
  }
  m.payload.resize(floats);
  r.bytes(m.payload.data(), floats * sizeof(float));
  return m;
}

FrameMessage points_message(const rollout::WorldFrame& frame, std::uint32_t dropped) {
  FrameMessage m;
  m.round = frame.round;
  m.action = frame.action;
  m.world_root = frame.world_root;
  m.kind = PayloadKind::Points;
  m.dropped = dropped;
  if (frame.world_positions) {
    const auto& pts = *frame.world_positions;
    m.point_count = static_cast<std::uint32_t>(pts.size());
    m.payload.reserve(pts.size() * 3);
    for (const auto& p : pts) {
      for (int i = 0; i < 3; ++i) m.payload.push_back(static_cast<float>(p[i]));
    }
  }
  return m;
}

FrameMessage splats_message(const rollout::WorldFrame& frame, const splat::GaussianSplatSet& set,
                            std::uint32_t dropped) {
  FrameMessage m;
  m.round = frame.round;
  m.action = frame.action;
  m.world_root = frame.world_root;
  m.kind = PayloadKind::Splats;
  m.dropped = dropped;
  m.point_count = static_cast<std::uint32_t>(set.size());
  m.payload.reserve(set.size() * splat::kChannels);
  for (const auto& s : set.splats) {
    m.payload.insert(m.payload.end(), s.mean.begin(), s.mean.end());
    m.payload.insert(m.payload.end(), s.color.begin(), s.color.end());
    m.payload.insert(m.payload.end(), s.scaling.begin(), s.scaling.end());
    m.payload.insert(m.payload.end(), s.rotation.begin(), s.rotation.end());
    m.payload.push_back(s.opacity);
  }
  return m;
}

ActionLabel parse_control(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::InvalidArgument, "control message is not JSON");
  }
  if (!j.is_object() || !j.contains("a") || !j["a"].is_string()) {
    fail(ErrorCode::InvalidArgument, "control message needs a string field \"a\"");
  }
  const auto token = j["a"].get<std::string>();
  if (token.size() != 1) fail(ErrorCode::UnknownAction, "unknown action '" + token + "'");
  return action_from_token(token[0]);
}

std::string control_message(ActionLabel action) {
  return nlohmann::json{{"a", std::string(1, action_token(action))}}.dump();
}

namespace ws {

std::string accept_key(const std::string& client_key) {
  static constexpr const char* kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  const std::string joined = client_key + kGuid;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(joined.data()), joined.size(), digest);
  unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<const char*>(out), static_cast<std::size_t>(n));
}

std::vector<std::uint8_t> encode(const Frame& frame, std::optional<std::array<std::uint8_t, 4>> mask) {
  std::vector<std::uint8_t> out;
  const std::size_t n = frame.payload.size();
  out.reserve(n + 14);
  out.push_back(static_cast<std::uint8_t>((frame.fin ? 0x80 : 0x00) |
                                          static_cast<std::uint8_t>(frame.opcode)));
  const std::uint8_t mbit = mask ? 0x80 : 0x00;
  if (n < 126) {
    out.push_back(static_cast<std::uint8_t>(mbit | n));
  } else if (n <= 0xFFFF) {
    out.push_back(mbit | 126);
    out.push_back(static_cast<std::uint8_t>(n >> 8));
    out.push_back(static_cast<std::uint8_t>(n));
  } else {
    out.push_back(mbit | 127);
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(std::uint64_t(n) >> (8 * i)));
  }
  if (mask) {
    out.insert(out.end(), mask->begin(), mask->end());
    for (std::size_t i = 0; i < n; ++i) out.push_back(frame.payload[i] ^ (*mask)[i % 4]);
  } else {
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  }
  return out;
}

std::optional<Parsed> decode(std::span<const std::uint8_t> bytes, std::size_t max_payload) {
  if (bytes.size() < 2) return std::nullopt;
  Parsed p;
  p.frame.fin = (bytes[0] & 0x80) != 0;
  if (bytes[0] & 0x70) fail(ErrorCode::MalformedFile, "websocket: reserved bits set");
  p.frame.opcode = static_cast<Opcode>(bytes[0] & 0x0F);
  p.masked = (bytes[1] & 0x80) != 0;
  std::uint64_t n = bytes[1] & 0x7F;
  std::size_t pos = 2;
  if (n == 126) {
    if (bytes.size() < 4) return std::nullopt;
    n = (std::uint64_t(bytes[2]) << 8) | bytes[3];
    pos = 4;
  } else if (n == 127) {
    if (bytes.size() < 10) return std::nullopt;
    n = 0;
    for (int i = 0; i < 8; ++i) n = (n << 8) | bytes[2 + i];
    pos = 10;
  }
  if (n > max_payload) fail(ErrorCode::OutOfRange, "websocket: frame exceeds payload limit");
  std::array<std::uint8_t, 4> key{};
  if (p.masked) {
    if (bytes.size() < pos + 4) return std::nullopt;
    std::memcpy(key.data(), bytes.data() + pos, 4);
    pos += 4;
  }
  if (bytes.size() < pos + n) return std::nullopt;
  p.frame.payload.assign(bytes.begin() + pos, bytes.begin() + pos + n);
  if (p.masked) {
    for (std::size_t i = 0; i < n; ++i) p.frame.payload[i] ^= key[i % 4];
  }
  p.consumed = pos + n;
  return p;
}

}  // namespace ws

}  // namespace avsim::protocol
