#pragma once

// Shared fixtures for the unit tests.

#include "avsim/ingest.hpp"
#include "avsim/posmap.hpp"
#include "avsim/synth.hpp"

#include <filesystem>
#include <memory>
#include <random>
#include <string>

namespace avsim::testing {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("avsim_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline const synth::SyntheticAvatar& humanoid() {
  static const synth::SyntheticAvatar avatar = synth::make_humanoid();
  return avatar;
}

inline std::shared_ptr<const ingest::ReferenceMesh> humanoid_reference() {
  static const auto ref = std::make_shared<const ingest::ReferenceMesh>(humanoid().reference);
  return ref;
}

// Axis-aligned box; the bottom face is a fan around vertex 8, its center, which
// is also the single waist vertex.
inline ingest::ReferenceMesh box_reference(const Vec3& lo = Vec3(0, 0, 0), const Vec3& hi = Vec3(1, 2, 0.5)) {
  ingest::ReferenceMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
  }
  m.vertices.push_back(Vec3(0.5 * (lo.x() + hi.x()), lo.y(), 0.5 * (lo.z() + hi.z())));
  m.faces = {{0, 1, 3}, {0, 3, 2}, {4, 6, 7}, {4, 7, 5}, {0, 4, 8}, {4, 5, 8}, {5, 1, 8}, {1, 0, 8},
             {2, 3, 7}, {2, 7, 6}, {0, 2, 6}, {0, 6, 4}, {1, 5, 7}, {1, 7, 3}};
  m.waist_vertex_ids = {8};
  m.update_extent();
  return m;
}

// `n` frames of the reference translated by k * step.
inline ingest::MotionSequence translated_sequence(std::shared_ptr<const ingest::ReferenceMesh> ref, int n,
                                                  const Vec3& step, ActionLabel action = ActionLabel::Forward) {
  ingest::MotionSequence seq;
  seq.reference = ref;
  for (int k = 0; k < n; ++k) {
    ingest::MeshFrame f;
    f.frame_index = k;
    f.action = action;
    for (const auto& v : ref->vertices) f.posed_vertices.push_back(v + k * step);
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

}  // namespace avsim::testing
