#pragma once

// Deterministic locomotion model used as the reference next-frame predictor:
// heading/speed/gait-phase integration plus a per-vertex oscillation rig.

#include "avsim/core.hpp"
#include "avsim/ingest.hpp"

#include <array>
#include <string>
#include <vector>

namespace avsim::predictor {

enum class Segment : std::uint8_t {
  Body = 0,
  LeftArm = 1,
  RightArm = 2,
  LeftLeg = 3,
  RightLeg = 4,
  Loose = 5,  // garment proxy
};

// Per-vertex segment assignment and the pivots the limbs swing about.
struct Rig {
  std::vector<Segment> segments;
  Vec3 left_shoulder = Vec3::Zero();
  Vec3 right_shoulder = Vec3::Zero();
  Vec3 left_hip = Vec3::Zero();
  Vec3 right_hip = Vec3::Zero();
  double loose_top = 0.0;     // y where garment motion starts (weight 0)
  double loose_bottom = 0.0;  // y of the hem (weight 1)

  // Everything rigid.
  static Rig rigid(std::size_t vertex_count);

  void validate(std::size_t vertex_count) const;
};

Rig load_rig(const std::string& path);
void save_rig(const Rig& rig, const std::string& path);

struct KinematicParams {
  double speed = 0.06;             // m/frame at full walk
  int turn_frames_180 = 12;
  int turn_frames_90 = 9;
  double gait_amplitude = 0.35;    // rad of limb swing at full speed
  double garment_amplitude = 0.04; // m of hem sway at full speed
  double stride_length = 1.2;      // m per gait cycle
  int accel_frames = 8;            // frames from rest to full speed

  void validate() const;
};

// heading = (sin(angle), cos(angle)) in the (x, z) ground plane, so angle 0
// faces +Z. W faces +Z, S faces -Z, A faces +X, D faces -X.
struct KinematicState {
  double heading_angle = 0.0;
  double target_angle = 0.0;
  double turn_rate = 0.0;  // rad/frame of the turn in progress
  double speed = 0.0;
  double phase = 0.0;      // [0, 2pi)
  Vec3 root_position = Vec3::Zero();

  Vec2 heading() const;
};

double action_heading(ActionLabel action);  // Idle keeps the current heading

// Frames a turn of |delta| radians takes: linear up to 90 degrees, then
// linear between the 90 and 180 degree settings.
int turn_frames(double abs_delta, const KinematicParams& params);

KinematicState kinematic_advance(const KinematicState& state, ActionLabel action,
                                 const KinematicParams& params);

// Posed vertices in world meters. `pivot` is the point the rigid root
// rotation turns about (rest-pose root).
std::vector<Vec3> kinematic_pose(const KinematicState& state, const ingest::ReferenceMesh& reference,
                                 const Rig& rig, const KinematicParams& params, const Vec3& pivot);

struct OracleStep {
  KinematicState state;
  std::vector<Vec3> posed_vertices;
};

OracleStep kinematic_oracle_step(const KinematicState& state, ActionLabel action,
                                 const KinematicParams& params,
                                 const ingest::ReferenceMesh& reference, const Rig& rig,
                                 const Vec3& pivot);

}  // namespace avsim::predictor
