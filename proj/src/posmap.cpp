#include "avsim/posmap.hpp"

#include "binio.hpp"
#include "layout_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace avsim::posmap {

namespace {

constexpr double kFramingMargin = 1.05;
constexpr double kWaistVisibilityPx = 0.75;

struct ViewAxes {
  Vec3 right, up, toward;
};

ViewAxes axes_for(ViewId view) {
  const Vec3 X = Vec3::UnitX(), Y = Vec3::UnitY(), Z = Vec3::UnitZ();
  switch (view) {
    case ViewId::PosX: return {-Z, Y, X};
    case ViewId::NegX: return {Z, Y, -X};
    case ViewId::PosY: return {X, -Z, Y};
    case ViewId::NegY: return {X, Z, -Y};
    case ViewId::PosZ: return {X, Y, Z};
    case ViewId::NegZ: return {-X, Y, -Z};
  }
  fail(ErrorCode::InvalidArgument, "bad view id");
}

Vec3 interpolate(const ingest::ReferenceMesh& ref, const PixelSample& s,
                 std::span<const Vec3> attributes) {
  const auto& f = ref.faces[s.face];
  return s.bary[0] * attributes[f[0]] + s.bary[1] * attributes[f[1]] +
         s.bary[2] * attributes[f[2]];
}

void check_attributes(std::span<const Vec3> attributes, std::size_t expected, bool ranged) {
  if (attributes.size() != expected) {
    fail(ErrorCode::VertexCountMismatch, "attribute count " + std::to_string(attributes.size()) +
                                             " != vertex count " + std::to_string(expected));
  }
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    const auto& a = attributes[i];
    if (!a.allFinite()) fail(ErrorCode::NonFinite, "attribute " + std::to_string(i));
    if (ranged && (a.minCoeff() < 0.0 || a.maxCoeff() > 1.0)) {
      fail(ErrorCode::OutOfRange, "attribute " + std::to_string(i) + " outside [0,1]");
    }
  }
}

}  // namespace

std::string_view to_string(ViewId view) {
  switch (view) {
    case ViewId::PosX: return "+X";
    case ViewId::NegX: return "-X";
    case ViewId::PosY: return "+Y";
    case ViewId::NegY: return "-Y";
    case ViewId::PosZ: return "+Z";
    case ViewId::NegZ: return "-Z";
  }
  return "?";
}

// ---- layout ----

ViewLayout ViewLayout::canonical(int width, int height) {
  if (width < 3 || height < 2) fail(ErrorCode::InvalidArgument, "atlas too small for six tiles");
  const int tw = width / 3, th = height / 2;
  ViewLayout layout;
  for (int i = 0; i < 6; ++i) {
    layout.tiles[i] = {static_cast<ViewId>(i), (i % 3) * tw, (i / 3) * th, tw, th};
  }
  return layout;
}

ViewLayout ViewLayout::scaled(int factor) const {
  if (factor < 1) fail(ErrorCode::InvalidArgument, "scale factor must be >= 1");
  ViewLayout out = *this;
  for (auto& t : out.tiles) {
    t.x0 *= factor;
    t.y0 *= factor;
    t.w *= factor;
    t.h *= factor;
  }
  return out;
}

int ViewLayout::tile_index_at(int x, int y) const {
  for (int i = 0; i < 6; ++i) {
    if (tiles[i].contains(x, y)) return i;
  }
  return -1;
}

void ViewLayout::validate(int width, int height) const {
  for (int i = 0; i < 6; ++i) {
    const auto& a = tiles[i];
    if (a.w <= 0 || a.h <= 0 || a.x0 < 0 || a.y0 < 0 || a.x0 + a.w > width ||
        a.y0 + a.h > height) {
      fail(ErrorCode::InvalidArgument, "tile " + std::to_string(i) + " outside atlas");
    }
    for (int j = 0; j < i; ++j) {
      const auto& b = tiles[j];
      const bool disjoint = a.x0 + a.w <= b.x0 || b.x0 + b.w <= a.x0 || a.y0 + a.h <= b.y0 ||
                            b.y0 + b.h <= a.y0;
      if (!disjoint) {
        fail(ErrorCode::InvalidArgument,
             "tiles " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
      }
    }
  }
}

// ---- atlas ----

PositionMapAtlas::PositionMapAtlas(int w, int h, const ViewLayout& l)
    : width(w), height(h), layout(l) {
  if (w <= 0 || h <= 0) fail(ErrorCode::InvalidArgument, "atlas dimensions must be positive");
  layout.validate(w, h);
  values.assign(static_cast<std::size_t>(w) * h, Vec3::Zero());
  mask.assign(values.size(), 0);
}

std::size_t PositionMapAtlas::foreground_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<std::uint32_t> PositionMapAtlas::foreground_indices() const {
  std::vector<std::uint32_t> out;
  out.reserve(foreground_count());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

bool PositionMapAtlas::same_support(const PositionMapAtlas& other) const {
  return width == other.width && height == other.height && layout == other.layout &&
         mask == other.mask;
}

void PositionMapAtlas::translate(const Vec3& delta) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i]) values[i] += delta;
  }
}

std::size_t PositionMapAtlas::out_of_range_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i] && (values[i].minCoeff() < 0.0 || values[i].maxCoeff() > 1.0)) ++n;
  }
  return n;
}

void PositionMapAtlas::check_range(const std::string& what) const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!mask[i]) continue;
    const auto& v = values[i];
    if (!v.allFinite()) fail(ErrorCode::NonFinite, what + ": pixel " + std::to_string(i));
    if (v.minCoeff() < 0.0 || v.maxCoeff() > 1.0) {
      const auto p = pixel(i);
      fail(ErrorCode::OutOfRange, what + ": pixel (" + std::to_string(p.x) + "," +
                                      std::to_string(p.y) + ") outside [0,1]");
    }
  }
}

// ---- cameras ----

Vec2 ViewCamera::project(const Vec3& p) const {
  return {(p.dot(right) - center.x()) / pixel_size + tile.w * 0.5,
          tile.h * 0.5 - (p.dot(up) - center.y()) / pixel_size};
}

Vec3 ViewCamera::unproject(double X, double Y) const {
  return right * (center.x() + (X - tile.w * 0.5) * pixel_size) +
         up * (center.y() + (tile.h * 0.5 - Y) * pixel_size);
}

std::array<ViewCamera, 6> frame_views(const ingest::ReferenceMesh& reference,
                                      const ViewLayout& layout) {
  if (reference.vertices.empty()) fail(ErrorCode::DegenerateMesh, "empty reference mesh");
  Vec3 lo = reference.vertices.front(), hi = lo;
  for (const auto& v : reference.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 c = 0.5 * (lo + hi);
  const Vec3 extent = (hi - lo) * kFramingMargin;

  std::array<ViewCamera, 6> cams;
  for (int i = 0; i < 6; ++i) {
    const auto& tile = layout.tiles[i];
    const auto ax = axes_for(tile.view);
    auto& cam = cams[i];
    cam.tile = tile;
    cam.right = ax.right;
    cam.up = ax.up;
    cam.toward = ax.toward;
    cam.center = {c.dot(ax.right), c.dot(ax.up)};
    const double er = std::abs(extent.dot(ax.right));
    const double eu = std::abs(extent.dot(ax.up));
    cam.pixel_size = std::max(er / tile.w, eu / tile.h);
    if (!(cam.pixel_size > 0.0)) {
      fail(ErrorCode::DegenerateMesh, std::string("zero extent in view ") +
                                          std::string(to_string(tile.view)));
    }
  }
  return cams;
}

// ---- rasterizer ----

AtlasRasterizer::AtlasRasterizer(std::shared_ptr<const ingest::ReferenceMesh> reference,
                                 int resolution)
    : reference_(std::move(reference)), resolution_(resolution) {
  if (!reference_) fail(ErrorCode::InvalidArgument, "null reference mesh");
  if (resolution_ < 6) fail(ErrorCode::InvalidArgument, "resolution too small");
  reference_->validate();
  layout_ = ViewLayout::canonical(resolution_, resolution_);
  cameras_ = frame_views(*reference_, layout_);
  rasterize();
  locate_waist_pixels();
}

double AtlasRasterizer::max_pixel_size() const {
  double m = 0.0;
  for (const auto& c : cameras_) m = std::max(m, c.pixel_size);
  return m;
}

void AtlasRasterizer::rasterize() {
  const auto& ref = *reference_;
  const std::size_t npix = static_cast<std::size_t>(resolution_) * resolution_;
  sample_of_pixel_.assign(npix, -1);
  std::vector<double> zbuf(npix, -std::numeric_limits<double>::infinity());
  std::vector<PixelSample> slot(npix);

  for (const auto& cam : cameras_) {
    const auto& tile = cam.tile;
    std::vector<Vec2> screen(ref.vertices.size());
    std::vector<double> depth(ref.vertices.size());
    for (std::size_t v = 0; v < ref.vertices.size(); ++v) {
      screen[v] = cam.project(ref.vertices[v]);
      depth[v] = cam.depth(ref.vertices[v]);
    }
    for (std::uint32_t fi = 0; fi < ref.faces.size(); ++fi) {
      const auto& f = ref.faces[fi];
      const Vec2 &a = screen[f[0]], &b = screen[f[1]], &c = screen[f[2]];
      const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
      if (area == 0.0 || !std::isfinite(area)) continue;

      const double minx = std::min({a.x(), b.x(), c.x()});
      const double maxx = std::max({a.x(), b.x(), c.x()});
      const double miny = std::min({a.y(), b.y(), c.y()});
      const double maxy = std::max({a.y(), b.y(), c.y()});
      const int x_begin = std::max(0, static_cast<int>(std::ceil(minx - 0.5)));
      const int x_end = std::min(tile.w - 1, static_cast<int>(std::floor(maxx - 0.5)));
      const int y_begin = std::max(0, static_cast<int>(std::ceil(miny - 0.5)));
      const int y_end = std::min(tile.h - 1, static_cast<int>(std::floor(maxy - 0.5)));

      for (int y = y_begin; y <= y_end; ++y) {
        const double py = y + 0.5;
        for (int x = x_begin; x <= x_end; ++x) {
          const double px = x + 0.5;
          const double w0 = ((b.x() - px) * (c.y() - py) - (b.y() - py) * (c.x() - px)) / area;
          const double w1 = ((c.x() - px) * (a.y() - py) - (c.y() - py) * (a.x() - px)) / area;
          const double w2 = 1.0 - w0 - w1;
          if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
          const double z = w0 * depth[f[0]] + w1 * depth[f[1]] + w2 * depth[f[2]];
          const std::size_t idx =
              static_cast<std::size_t>(tile.y0 + y) * resolution_ + (tile.x0 + x);
          if (z > zbuf[idx]) {
            zbuf[idx] = z;
            slot[idx] = {static_cast<std::uint32_t>(idx), fi, {w0, w1, w2}};
          }
        }
      }
    }
  }

  samples_.clear();
  for (std::size_t i = 0; i < npix; ++i) {
    if (std::isfinite(zbuf[i])) {
      sample_of_pixel_[i] = static_cast<std::int32_t>(samples_.size());
      samples_.push_back(slot[i]);
    }
  }
  if (samples_.empty()) fail(ErrorCode::DegenerateMesh, "reference mesh covers no pixels");
}

void AtlasRasterizer::locate_waist_pixels() {
  const auto& ref = *reference_;
  waist_pixels_.clear();
  for (auto wid : ref.waist_vertex_ids) {
    const Vec3& v = ref.vertices[wid];
    double best = std::numeric_limits<double>::infinity();
    Pixel chosen{-1, -1};
    for (const auto& cam : cameras_) {
      const Vec2 p = cam.project(v);
      const int lx = static_cast<int>(std::floor(p.x()));
      const int ly = static_cast<int>(std::floor(p.y()));
      if (lx < 0 || ly < 0 || lx >= cam.tile.w || ly >= cam.tile.h) continue;
      const std::size_t idx =
          static_cast<std::size_t>(cam.tile.y0 + ly) * resolution_ + (cam.tile.x0 + lx);
      const auto si = sample_of_pixel_[idx];
      if (si < 0) continue;
      const Vec3 surface = interpolate(ref, samples_[si], ref.vertices);
      if (std::abs(cam.depth(surface) - cam.depth(v)) > kWaistVisibilityPx * cam.pixel_size) {
        continue;
      }
      const double d = (surface - v).norm();
      if (d < best) {
        best = d;
        chosen = {cam.tile.x0 + lx, cam.tile.y0 + ly};
      }
    }
    if (chosen.x < 0) {
      fail(ErrorCode::DegenerateMesh, "waist vertex " + std::to_string(wid) + " not visible");
    }
    waist_pixels_.push_back(chosen);
  }
}

PositionMapAtlas AtlasRasterizer::blank() const {
  PositionMapAtlas atlas(resolution_, resolution_, layout_);
  for (const auto& s : samples_) atlas.mask[s.pixel] = 1;
  return atlas;
}

PositionMapAtlas AtlasRasterizer::render_unchecked(std::span<const Vec3> attributes) const {
  check_attributes(attributes, reference_->vertex_count(), false);
  auto atlas = blank();
  for (const auto& s : samples_) atlas.values[s.pixel] = interpolate(*reference_, s, attributes);
  return atlas;
}

PositionMapAtlas AtlasRasterizer::render(std::span<const Vec3> attributes) const {
  check_attributes(attributes, reference_->vertex_count(), true);
  auto atlas = blank();
  for (const auto& s : samples_) atlas.values[s.pixel] = interpolate(*reference_, s, attributes);
  return atlas;
}

Vec3 AtlasRasterizer::sample_root(std::span<const Vec3> attributes) const {
  check_attributes(attributes, reference_->vertex_count(), false);
  Vec3 sum = Vec3::Zero();
  for (const auto& p : waist_pixels_) {
    const auto idx = static_cast<std::size_t>(p.y) * resolution_ + p.x;
    sum += interpolate(*reference_, samples_[sample_of_pixel_[idx]], attributes);
  }
  return sum / static_cast<double>(waist_pixels_.size());
}

PositionMapAtlas rasterize_atlas(const ingest::ReferenceMesh& reference,
                                 std::span<const Vec3> attributes, int resolution) {
  AtlasRasterizer r(std::make_shared<ingest::ReferenceMesh>(reference), resolution);
  return r.render(attributes);
}

// ---- normalization ----

NormalizedGroup normalize_group(std::span<const ingest::MeshFrame> frames4,
                                const ingest::ReferenceMesh& reference, double s) {
  if (frames4.size() != 4) fail(ErrorCode::InvalidArgument, "group needs exactly 4 frames");
  if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorCode::InvalidArgument, "scale must be positive");
  NormalizedGroup out;
  out.record.s = s;
  out.record.translation = s * ingest::waist_root(reference, frames4[2].posed_vertices);
  for (int k = 0; k < 4; ++k) {
    const auto& posed = frames4[k].posed_vertices;
    if (posed.size() != reference.vertex_count()) {
      fail(ErrorCode::VertexCountMismatch, "frame " + std::to_string(frames4[k].frame_index));
    }
    auto& dst = out.attributes[k];
    dst.resize(posed.size());
    for (std::size_t i = 0; i < posed.size(); ++i) {
      dst[i] = out.record.forward(posed[i]);
      if (!(dst[i].minCoeff() >= 0.0 && dst[i].maxCoeff() <= 1.0)) {
        fail(ErrorCode::OutOfRange, "frame " + std::to_string(frames4[k].frame_index) +
                                        " vertex " + std::to_string(i) +
                                        " leaves [0,1] after normalization");
      }
    }
  }
  return out;
}

FrameGroup make_frame_group(const ingest::MotionSequence& seq, const ingest::GroupIndex& group,
                            const AtlasRasterizer& rasterizer, double s) {
  if (group.start + 3 >= seq.size()) fail(ErrorCode::InvalidArgument, "group outside sequence");
  const auto normalized = normalize_group(
      std::span<const ingest::MeshFrame>(seq.frames).subspan(group.start, 4),
      rasterizer.reference(), s);
  FrameGroup out;
  out.record = normalized.record;
  out.action = group.action;
  for (int k = 0; k < 4; ++k) out.atlases[k] = rasterizer.render(normalized.attributes[k]);
  return out;
}

// ---- decoding / resampling ----

PointCloud atlas_to_points(const PositionMapAtlas& atlas) {
  PointCloud cloud;
  const auto n = atlas.foreground_count();
  cloud.points.reserve(n);
  cloud.pixels.reserve(n);
  for (std::size_t i = 0; i < atlas.values.size(); ++i) {
    if (!atlas.mask[i]) continue;
    cloud.points.push_back(atlas.values[i]);
    cloud.pixels.push_back(atlas.pixel(i));
  }
  return cloud;
}

PositionMapAtlas upscale_atlas(const PositionMapAtlas& atlas, int factor) {
  if (factor < 1) fail(ErrorCode::InvalidArgument, "upscale factor must be >= 1");
  PositionMapAtlas out(atlas.width * factor, atlas.height * factor, atlas.layout.scaled(factor));
  for (int t = 0; t < 6; ++t) {
    const auto& src = atlas.layout.tiles[t];
    const auto& dst = out.layout.tiles[t];
    for (int Y = 0; Y < dst.h; ++Y) {
      const double sy = (Y + 0.5) / factor - 0.5;
      const int y0 = static_cast<int>(std::floor(sy));
      const double fy = sy - y0;
      const int ys[2] = {std::clamp(y0, 0, src.h - 1), std::clamp(y0 + 1, 0, src.h - 1)};
      const double wy[2] = {1.0 - fy, fy};
      for (int X = 0; X < dst.w; ++X) {
        const double sx = (X + 0.5) / factor - 0.5;
        const int x0 = static_cast<int>(std::floor(sx));
        const double fx = sx - x0;
        const int xs[2] = {std::clamp(x0, 0, src.w - 1), std::clamp(x0 + 1, 0, src.w - 1)};
        const double wx[2] = {1.0 - fx, fx};

        Vec3 acc = Vec3::Zero();
        double wsum = 0.0;
        for (int j = 0; j < 2; ++j) {
          for (int i = 0; i < 2; ++i) {
            const double w = wy[j] * wx[i];
            if (w <= 0.0) continue;
            const auto idx = atlas.index(src.x0 + xs[i], src.y0 + ys[j]);
            if (!atlas.mask[idx]) continue;
            acc += w * atlas.values[idx];
            wsum += w;
          }
        }
        if (wsum <= 0.0) continue;
        const auto o = out.index(dst.x0 + X, dst.y0 + Y);
        out.mask[o] = 1;
        out.values[o] = acc / wsum;
      }
    }
  }
  return out;
}

Vec3 extract_root(const PositionMapAtlas& atlas, std::span<const Pixel> waist_pixels) {
  if (waist_pixels.empty()) fail(ErrorCode::InvalidArgument, "empty waist pixel set");
  Vec3 sum = Vec3::Zero();
  for (const auto& p : waist_pixels) {
    if (p.x < 0 || p.y < 0 || p.x >= atlas.width || p.y >= atlas.height) {
      fail(ErrorCode::InvalidArgument, "waist pixel outside atlas");
    }
    const auto idx = atlas.index(p.x, p.y);
    if (!atlas.mask[idx]) {
      fail(ErrorCode::MaskMismatch, "waist pixel (" + std::to_string(p.x) + "," +
                                        std::to_string(p.y) + ") is background");
    }
    sum += atlas.values[idx];
  }
  return sum / static_cast<double>(waist_pixels.size());
}

// ---- PMAT ----

std::vector<std::uint8_t> encode_atlas(const PositionMapAtlas& atlas) {
  binio::Writer out;
  out.magic("PMAT");
  out.u32(static_cast<std::uint32_t>(atlas.width));
  out.u32(static_cast<std::uint32_t>(atlas.height));
  io::write_layout(out, atlas.layout);
  for (const auto& v : atlas.values) {
    out.f32(static_cast<float>(v.x()));
    out.f32(static_cast<float>(v.y()));
    out.f32(static_cast<float>(v.z()));
  }
  io::write_mask(out, atlas.mask);
  return std::move(out.data());
}

PositionMapAtlas decode_atlas(std::span<const std::uint8_t> bytes) {
  binio::Reader in(bytes, "PMAT");
  in.expect_magic("PMAT");
  const auto w = in.u32(), h = in.u32();
  if (w == 0 || h == 0 || w > 65535 || h > 65535) {
    fail(ErrorCode::MalformedFile, "PMAT: bad dimensions");
  }
  const auto layout = io::read_layout(in);
  try {
    layout.validate(static_cast<int>(w), static_cast<int>(h));
  } catch (const Error& e) {
    fail(ErrorCode::MalformedFile, std::string("PMAT: ") + e.what());
  }
  PositionMapAtlas atlas(static_cast<int>(w), static_cast<int>(h), layout);
  in.need(atlas.values.size() * 12);
  for (auto& v : atlas.values) {
    const float x = in.f32(), y = in.f32(), z = in.f32();
    v = Vec3(x, y, z);
  }
  atlas.mask = io::read_mask(in, atlas.values.size());
  in.expect_end();
  return atlas;
}

void write_atlas(const PositionMapAtlas& atlas, const std::string& path) {
  binio::write_file(path, encode_atlas(atlas));
}

PositionMapAtlas read_atlas(const std::string& path) {
  return decode_atlas(binio::read_file(path));
}

}  // namespace avsim::posmap
