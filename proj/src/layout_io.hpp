#pragma once

// Layout table and bit-packed mask encoding shared by PMAT, PMBA and PMPC.

#include "avsim/posmap.hpp"
#include "binio.hpp"

namespace avsim::posmap::io {

inline void write_layout(binio::Writer& out, const ViewLayout& layout) {
  for (const auto& t : layout.tiles) {
    out.u8(static_cast<std::uint8_t>(t.view));
    out.u16(static_cast<std::uint16_t>(t.x0));
    out.u16(static_cast<std::uint16_t>(t.y0));
    out.u16(static_cast<std::uint16_t>(t.w));
    out.u16(static_cast<std::uint16_t>(t.h));
  }
}

inline ViewLayout read_layout(binio::Reader& in) {
  ViewLayout layout;
  for (auto& t : layout.tiles) {
    const auto view = in.u8();
    if (view > 5) fail(ErrorCode::MalformedFile, "view id " + std::to_string(view));
    t.view = static_cast<ViewId>(view);
    t.x0 = in.u16();
    t.y0 = in.u16();
    t.w = in.u16();
    t.h = in.u16();
  }
  return layout;
}

// LSB-first within each byte, row-major pixel order.
inline void write_mask(binio::Writer& out, const std::vector<std::uint8_t>& mask) {
  std::vector<std::uint8_t> bits((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  out.bytes(bits.data(), bits.size());
}

inline std::vector<std::uint8_t> read_mask(binio::Reader& in, std::size_t count) {
  std::vector<std::uint8_t> bits((count + 7) / 8);
  in.bytes(bits.data(), bits.size());
  std::vector<std::uint8_t> mask(count);
  for (std::size_t i = 0; i < count; ++i) mask[i] = (bits[i / 8] >> (i % 8)) & 1u;
  return mask;
}

}  // namespace avsim::posmap::io
