#pragma once

// Linear subspace over flattened foreground pixels, used to pull the six
// views of a generated atlas back into mutual agreement.

#include "avsim/posmap.hpp"

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

namespace avsim::pca {

inline constexpr int kDefaultComponents = 200;

struct PcaBasis {
  int width = 0;
  int height = 0;
  posmap::ViewLayout layout;
  std::vector<std::uint32_t> foreground_index;  // linear pixel indices, ascending
  Eigen::VectorXd mean;                         // 3N, xyz interleaved per pixel
  Eigen::MatrixXd components;                   // 3N x M, orthonormal columns
  Eigen::VectorXd singular_values;              // M

  int M() const { return static_cast<int>(components.cols()); }
  std::size_t dimension() const { return static_cast<std::size_t>(mean.size()); }

  // First m components of the same fit.
  PcaBasis truncated(int m) const;
};

Eigen::VectorXd flatten(const posmap::PositionMapAtlas& atlas);

// Throws MaskMismatch unless the atlas mask matches the basis support.
void check_support(const PcaBasis& basis, const posmap::PositionMapAtlas& atlas);

// Requires >= 2 samples with identical masks and 1 <= M <= min(3N, F-1).
PcaBasis fit(std::span<const posmap::PositionMapAtlas> samples, int M);

Eigen::VectorXd project(const PcaBasis& basis, const posmap::PositionMapAtlas& atlas);

struct Reconstruction {
  posmap::PositionMapAtlas atlas;
  std::size_t clamped = 0;  // components pulled back into [0,1]
};

Reconstruction reconstruct(const PcaBasis& basis, const Eigen::VectorXd& w);

// reconstruct(project(x)) without clamping, as a flat vector.
Eigen::VectorXd reconstruct_flat(const PcaBasis& basis, const Eigen::VectorXd& w);

// ||x - (B B^T (x - mean) + mean)||_2 over the flattened foreground.
double reconstruction_error(const PcaBasis& basis, const posmap::PositionMapAtlas& atlas);

// Project and reconstruct: the alignment applied to generated atlases.
Reconstruction align(const PcaBasis& basis, const posmap::PositionMapAtlas& atlas);

std::vector<std::uint8_t> encode_basis(const PcaBasis& basis);
PcaBasis decode_basis(std::span<const std::uint8_t> bytes);
void write_basis(const PcaBasis& basis, const std::string& path);
PcaBasis read_basis(const std::string& path);

}  // namespace avsim::pca
