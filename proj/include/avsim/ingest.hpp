#pragma once

// Mesh-sequence loading, validation, and four-frame window construction.

#include "avsim/core.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace avsim::ingest {

// Static A-pose template. Its rasterization defines the permanent atlas layout.
struct ReferenceMesh {
  std::vector<Vec3> vertices;                       // meters
  std::vector<std::array<std::uint32_t, 3>> faces;  // vertex index triples
  std::vector<std::uint32_t> waist_vertex_ids;      // root = mean of these
  double longest_axis_length = 0.0;                 // longest AABB extent, meters

  std::size_t vertex_count() const { return vertices.size(); }

  // Recomputes longest_axis_length from the vertex AABB.
  void update_extent();

  // Throws DegenerateMesh / InvalidArgument when an invariant is broken.
  void validate() const;
};

struct MeshFrame {
  std::int64_t frame_index = 0;
  std::vector<Vec3> posed_vertices;  // world coordinates, reference order
  ActionLabel action = ActionLabel::Idle;
};

struct MotionSequence {
  std::vector<MeshFrame> frames;
  std::shared_ptr<const ReferenceMesh> reference;

  std::size_t size() const { return frames.size(); }
};

// A four-frame window [start, start+3]; `action` is the label of frame t = start+2.
struct GroupIndex {
  std::size_t start = 0;
  ActionLabel action = ActionLabel::Idle;
};

// Parses a PMSQ container and checks it against `reference`: the embedded
// reference block and every frame must carry reference.vertex_count() vertices.
MotionSequence load_motion_sequence(const std::string& path, const ReferenceMesh& reference);

// Parses a PMSQ container, binding the frames to its embedded reference mesh.
MotionSequence read_motion_sequence(const std::string& path);
MotionSequence decode_motion_sequence(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_motion_sequence(const MotionSequence& seq);
void save_motion_sequence(const MotionSequence& seq, const std::string& path);

// Throws NonContiguousFrames / VertexCountMismatch / UnknownAction.
void validate_sequence(const MotionSequence& seq);

std::vector<GroupIndex> build_frame_groups(const MotionSequence& seq);

inline constexpr double kNormalizedLongestAxis = 0.7;

// s such that the reference's longest axis maps to 0.7 normalized units.
double compute_global_scale(const ReferenceMesh& reference);

// Mean of the waist vertices of a posed frame.
Vec3 waist_root(const ReferenceMesh& reference, const std::vector<Vec3>& posed);

}  // namespace avsim::ingest
