#pragma once

// Synthetic kinematic dataset: a tessellated humanoid in A-pose with a
// garment proxy, its rig, and motion sequences driven by the kinematic model.

#include "avsim/ingest.hpp"
#include "avsim/kinematic.hpp"

#include <string>
#include <vector>

namespace avsim::synth {

struct HumanoidOptions {
  int radial_segments = 24;
};

struct SyntheticAvatar {
  ingest::ReferenceMesh reference;
  predictor::Rig rig;
};

// About 1.72 m tall, facing +Z, arms 30 degrees down, skirt from the waist
// to mid-thigh. Coordinates are rounded to float so files round-trip exactly.
SyntheticAvatar make_humanoid(const HumanoidOptions& options = {});

// Single unit quad in the z = 0 plane (two triangles, one waist vertex).
ingest::ReferenceMesh make_quad();

// Frame 0 is the rest pose and frame k+1 results from actions[k]. Frame k is
// labeled with actions[k], the key that drives it to the next frame; the last
// frame is labeled Idle.
ingest::MotionSequence synthesize_sequence(const SyntheticAvatar& avatar,
                                           const predictor::KinematicParams& params,
                                           const std::vector<ActionLabel>& actions);

struct AvatarBuildOptions {
  HumanoidOptions humanoid;
  predictor::KinematicParams params;
  int resolution = 128;
  int components = 200;
  int upscale = 4;
  std::string training_script = "30W,20A,30S,20D,15I,25W,20D,30S,20A,15I";
  int training_repeat = 2;
};

// Writes reference.pmsq, rig.json, standing.pmat, train.pmsq, basis.pmpc,
// base.pmba and manifest.json into `dir`.
void write_avatar_dir(const std::string& dir, const std::string& avatar_id,
                      const AvatarBuildOptions& options = {});

}  // namespace avsim::synth
