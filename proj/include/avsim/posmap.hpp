#pragma once

// Six-view position-map atlases: orthographic rasterization of the A-pose
// reference mesh with posed coordinates as vertex attributes, group
// normalization, point decoding, foreground-aware upscaling and root lookup.

#include "avsim/core.hpp"
#include "avsim/ingest.hpp"

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace avsim::posmap {

inline constexpr int kCanonicalResolution = 128;

enum class ViewId : std::uint8_t { PosX = 0, NegX = 1, PosY = 2, NegY = 3, PosZ = 4, NegZ = 5 };

std::string_view to_string(ViewId view);

struct Tile {
  ViewId view = ViewId::PosX;
  int x0 = 0, y0 = 0, w = 0, h = 0;

  bool contains(int x, int y) const { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; }
  bool operator==(const Tile&) const = default;
};

struct ViewLayout {
  std::array<Tile, 6> tiles{};

  // 3 columns x 2 rows of (width/3) x (height/2) tiles ordered
  // +X, -X, +Y / -Y, +Z, -Z. Leftover columns/rows stay background.
  static ViewLayout canonical(int width, int height);

  ViewLayout scaled(int factor) const;

  // Index into tiles, or -1 when (x, y) lies outside every tile.
  int tile_index_at(int x, int y) const;

  // Throws InvalidArgument unless tiles are disjoint and inside the atlas.
  void validate(int width, int height) const;

  bool operator==(const ViewLayout&) const = default;
};

struct Pixel {
  int x = 0;
  int y = 0;
  bool operator==(const Pixel&) const = default;
};

// Per-pixel 3-vectors plus a foreground mask. Background pixels hold (0,0,0);
// foreground status comes only from the mask. Values are normalized
// coordinates in [0,1] for position maps proper; the container itself does
// not enforce the range so the same type can carry world-space planes.
struct PositionMapAtlas {
  int width = 0;
  int height = 0;
  ViewLayout layout;
  std::vector<Vec3> values;          // row-major
  std::vector<std::uint8_t> mask;    // 1 = foreground

  PositionMapAtlas() = default;
  PositionMapAtlas(int w, int h, const ViewLayout& l);

  std::size_t pixel_count() const { return values.size(); }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  Pixel pixel(std::size_t index) const {
    return {static_cast<int>(index % width), static_cast<int>(index / width)};
  }
  bool foreground(std::size_t i) const { return mask[i] != 0; }

  std::size_t foreground_count() const;
  std::vector<std::uint32_t> foreground_indices() const;

  // Same dimensions, layout and mask.
  bool same_support(const PositionMapAtlas& other) const;

  // Adds `delta` to every foreground value.
  void translate(const Vec3& delta);

  // Throws OutOfRange if any foreground component leaves [0,1].
  void check_range(const std::string& what) const;
  std::size_t out_of_range_count() const;
};

// Orthographic camera for one tile. `toward` points at the camera, so larger
// toward-coordinates are closer. Tile-local coordinates have pixel centers at
// (i + 0.5, j + 0.5) with rows running downward.
struct ViewCamera {
  Tile tile;
  Vec3 right = Vec3::UnitX();
  Vec3 up = Vec3::UnitY();
  Vec3 toward = Vec3::UnitZ();
  Vec2 center = Vec2::Zero();  // box center in (right, up)
  double pixel_size = 1.0;     // meters per pixel

  Vec2 project(const Vec3& p) const;
  double depth(const Vec3& p) const { return toward.dot(p); }
  // Point at depth 0 under the tile-local coordinate (X, Y).
  Vec3 unproject(double X, double Y) const;
};

// Fixed per-avatar framing: each view frames the reference AABB inflated by 5%,
// fitted into its tile with square pixels and centered.
std::array<ViewCamera, 6> frame_views(const ingest::ReferenceMesh& reference,
                                      const ViewLayout& layout);

// Which face covers a foreground pixel and where.
struct PixelSample {
  std::uint32_t pixel = 0;
  std::uint32_t face = 0;
  std::array<double, 3> bary{};
};

// Rasterizes the reference mesh once per resolution; rendering an attribute
// set is then a barycentric gather. Immutable after construction.
class AtlasRasterizer {
 public:
  AtlasRasterizer(std::shared_ptr<const ingest::ReferenceMesh> reference, int resolution);

  int resolution() const { return resolution_; }
  const ViewLayout& layout() const { return layout_; }
  const std::array<ViewCamera, 6>& cameras() const { return cameras_; }
  const std::vector<PixelSample>& samples() const { return samples_; }
  const ingest::ReferenceMesh& reference() const { return *reference_; }
  std::shared_ptr<const ingest::ReferenceMesh> reference_ptr() const { return reference_; }

  // Width of one pixel in world meters per view (uniform across views is not
  // guaranteed; this returns the largest).
  double max_pixel_size() const;

  // Interpolates per-vertex attributes; requires components in [0,1].
  PositionMapAtlas render(std::span<const Vec3> attributes) const;
  // Same gather without the range requirement (world-space planes).
  PositionMapAtlas render_unchecked(std::span<const Vec3> attributes) const;

  // Empty atlas carrying this layout and mask.
  PositionMapAtlas blank() const;

  // One pixel per waist vertex: its projection into the nearest tile where it
  // is visible.
  const std::vector<Pixel>& waist_pixels() const { return waist_pixels_; }

  // Mean of the waist pixels of render(attributes), without rendering.
  Vec3 sample_root(std::span<const Vec3> attributes) const;

 private:
  void rasterize();
  void locate_waist_pixels();

  std::shared_ptr<const ingest::ReferenceMesh> reference_;
  int resolution_;
  ViewLayout layout_;
  std::array<ViewCamera, 6> cameras_;
  std::vector<PixelSample> samples_;
  std::vector<std::int32_t> sample_of_pixel_;
  std::vector<Pixel> waist_pixels_;
};

// One-shot rasterization (builds a rasterizer internally).
PositionMapAtlas rasterize_atlas(const ingest::ReferenceMesh& reference,
                                 std::span<const Vec3> attributes, int resolution);

// v' = s * v - T + 0.5, with T = s * root(frame t).
struct NormalizationRecord {
  double s = 1.0;
  Vec3 translation = Vec3::Zero();  // T_t
  Vec3 shift = Vec3::Constant(0.5);

  Vec3 forward(const Vec3& v) const { return s * v - translation + shift; }
  Vec3 inverse(const Vec3& v) const { return (v - shift + translation) / s; }
};

struct NormalizedGroup {
  std::array<std::vector<Vec3>, 4> attributes;  // frames t-2 .. t+1
  NormalizationRecord record;
};

// Normalizes four consecutive frames around the root of the third one.
// Throws OutOfRange when any component leaves [0,1].
NormalizedGroup normalize_group(std::span<const ingest::MeshFrame> frames4,
                                const ingest::ReferenceMesh& reference, double s);

struct FrameGroup {
  std::array<PositionMapAtlas, 4> atlases;
  NormalizationRecord record;
  ActionLabel action = ActionLabel::Idle;
};

FrameGroup make_frame_group(const ingest::MotionSequence& seq, const ingest::GroupIndex& group,
                            const AtlasRasterizer& rasterizer, double s);

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Pixel> pixels;
};

// One point per foreground pixel, row-major.
PointCloud atlas_to_points(const PositionMapAtlas& atlas);

// Per-tile bilinear upscaling restricted to foreground neighbors.
PositionMapAtlas upscale_atlas(const PositionMapAtlas& atlas, int factor);

// Mean of the atlas values at the waist pixels.
Vec3 extract_root(const PositionMapAtlas& atlas, std::span<const Pixel> waist_pixels);

// PMAT codec. Values are stored as float32.
std::vector<std::uint8_t> encode_atlas(const PositionMapAtlas& atlas);
PositionMapAtlas decode_atlas(std::span<const std::uint8_t> bytes);
void write_atlas(const PositionMapAtlas& atlas, const std::string& path);
PositionMapAtlas read_atlas(const std::string& path);

}  // namespace avsim::posmap
