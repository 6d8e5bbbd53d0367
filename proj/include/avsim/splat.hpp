#pragma once

// Coarse Gaussian-splat composition from upscaled atlases, the refinement
// seam, similarity re-alignment to world coordinates, and PLY export.

#include "avsim/posmap.hpp"

#include <Eigen/Core>

#include <array>
#include <span>
#include <string>
#include <vector>

namespace avsim::splat {

inline constexpr double kMeanOffsetBound = 0.05;
inline constexpr int kChannels = 14;

struct Splat {
  std::array<float, 3> mean{};
  std::array<float, 3> color{};     // rank-0 SH coefficients
  std::array<float, 3> scaling{};   // linear
  std::array<float, 4> rotation{1.0f, 0.0f, 0.0f, 0.0f};  // w, x, y, z
  float opacity = 1.0f;

  bool operator==(const Splat&) const = default;
};

using Offset = std::array<float, kChannels>;  // mean 3, color 3, scaling 3, rotation 4, opacity 1

struct GaussianSplatSet {
  std::vector<Splat> splats;

  std::size_t size() const { return splats.size(); }
  bool operator==(const GaussianSplatSet&) const = default;
};

// Standing-pose attributes at upscaled resolution. Heights are in the same
// normalized units as the positions handed to compose_coarse.
struct BaseAttributeMap {
  int width = 0;
  int height = 0;
  posmap::ViewLayout layout;
  std::vector<std::uint8_t> mask;
  std::vector<std::array<float, 3>> color;
  std::vector<std::array<float, 3>> scaling;
  std::vector<std::array<float, 4>> rotation;
  std::vector<float> opacity;
  float standing_height = 1.0f;  // H_s
  std::uint8_t height_axis = 1;  // axis H_s and H_p are measured along

  void validate() const;
};

// Extent of the foreground values along `axis`.
double measure_height(const posmap::PositionMapAtlas& atlas, int axis);

// Translates the foreground so its AABB is centered at 0.5 (no rescaling,
// so heights stay comparable across frames).
posmap::PositionMapAtlas center_aabb(const posmap::PositionMapAtlas& atlas);

GaussianSplatSet compose_coarse(const posmap::PositionMapAtlas& upscaled, const BaseAttributeMap& base,
                                double posed_height);

GaussianSplatSet apply_refinement(const GaussianSplatSet& coarse, std::span<const Offset> offsets,
                                  double mean_offset_bound = kMeanOffsetBound);

struct SimilarityTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  void validate() const;
};

// Least-squares similarity with det(R) = +1 mapping source onto target.
SimilarityTransform procrustes_align(std::span<const Vec3> source, std::span<const Vec3> target);

double residual_rms(const SimilarityTransform& t, std::span<const Vec3> source,
                    std::span<const Vec3> target);

GaussianSplatSet to_world(const GaussianSplatSet& set, const SimilarityTransform& transform);

std::vector<Vec3> means_of(const GaussianSplatSet& set);

// Values on the foreground pixels of `support`, in foreground order.
posmap::PositionMapAtlas scatter(const posmap::PositionMapAtlas& support, std::span<const Vec3> values);

struct ComposedFrame {
  GaussianSplatSet splats;      // world space
  SimilarityTransform transform;
  double posed_height = 0.0;
  double residual = 0.0;
};

// upscale -> center -> compose -> zero refinement -> align to the upscaled
// world positions -> to_world.
ComposedFrame compose_frame(const posmap::PositionMapAtlas& local,
                            std::span<const Vec3> world_positions, const BaseAttributeMap& base,
                            int factor);

// PLY binary_little_endian, float32 x,y,z,f_dc_0..2,scale_0..2,rot_0..3,opacity.
std::vector<std::uint8_t> encode_ply(const GaussianSplatSet& set);
GaussianSplatSet decode_ply(std::span<const std::uint8_t> bytes);
void export_splats(const GaussianSplatSet& set, const std::string& path);
GaussianSplatSet import_splats(const std::string& path);

std::vector<std::uint8_t> encode_base(const BaseAttributeMap& base);
BaseAttributeMap decode_base(std::span<const std::uint8_t> bytes);
void write_base(const BaseAttributeMap& base, const std::string& path);
BaseAttributeMap read_base(const std::string& path);

// Plain base map for an upscaled standing atlas: height-graded color,
// isotropic scaling of one upscaled pixel, identity rotation.
BaseAttributeMap make_base_attributes(const posmap::PositionMapAtlas& upscaled_standing,
                                      double pixel_size_normalized);

}  // namespace avsim::splat
