#pragma once

// Progressive inference: predict the next atlas, accumulate its per-pixel
// increment into world coordinates, re-center the window on the new root,
// and optionally PCA-align the emitted local geometry.

#include "avsim/pca.hpp"
#include "avsim/posmap.hpp"
#include "avsim/predictor.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace avsim::rollout {

inline constexpr double kDefaultRootTolerance = 0.02;

using WorldPositions = std::shared_ptr<const std::vector<Vec3>>;

// Everything a session needs besides its own state. Shared and immutable.
struct Pipeline {
  std::shared_ptr<const predictor::Predictor> predictor;
  std::shared_ptr<const pca::PcaBasis> basis;  // null: no alignment
  std::vector<posmap::Pixel> waist_pixels;
  double s = 1.0;
  double root_tolerance = kDefaultRootTolerance;
};

struct SessionState {
  std::array<posmap::PositionMapAtlas, 3> context;  // frames t-2 .. t, normalized
  WorldPositions world_positions;                   // one per foreground pixel, meters
  Vec3 world_root = Vec3::Zero();
  std::uint64_t round = 0;
  posmap::NormalizationRecord record;  // maps frame t between normalized and world
  predictor::StatePtr predictor_state;
};

struct WorldFrame {
  std::uint64_t round = 0;  // rounds completed, 1 for the first emitted frame
  ActionLabel action = ActionLabel::Idle;
  Vec3 world_root = Vec3::Zero();
  WorldPositions world_positions;
  posmap::PositionMapAtlas local;  // re-centered, PCA-aligned when a basis is set
  double root_pixel_deviation = 0.0;
  std::size_t fg_count = 0;
  std::size_t clamped = 0;
  std::size_t out_of_range = 0;
  double increment = 0.0;  // |world_root step|, meters
};

struct StepResult {
  SessionState state;
  WorldFrame frame;
};

SessionState init_session(const posmap::PositionMapAtlas& standing, const Vec3& world_origin,
                          const Pipeline& pipeline);

// Pure: the input state is left untouched, so a failed step changes nothing.
StepResult step(const SessionState& state, ActionLabel action, const Pipeline& pipeline);

struct ScriptEntry {
  ActionLabel action = ActionLabel::Idle;
  int repeat = 1;
};
using Script = std::vector<ScriptEntry>;

// "60W,60S,60A,20I" (counts optional, default 1).
Script parse_script(const std::string& text);
std::vector<ActionLabel> expand_script(const Script& script, int repeat = 1);

struct TrajectoryRecord {
  std::uint64_t round = 0;
  ActionLabel action = ActionLabel::Idle;
  Vec3 world_root = Vec3::Zero();
  double root_pixel_deviation = 0.0;
  std::size_t fg_count = 0;
  double increment = 0.0;
  std::size_t clamped = 0;
  std::size_t out_of_range = 0;
};

TrajectoryRecord record_of(const WorldFrame& frame);

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  SessionState final_state;
};

using FrameSink = std::function<void(const WorldFrame&)>;

Trajectory run_actions(const SessionState& state, const std::vector<ActionLabel>& actions,
                       const Pipeline& pipeline, const FrameSink& sink = {});
Trajectory run_script(const SessionState& state, const Script& script, const Pipeline& pipeline,
                      int repeat = 1, const FrameSink& sink = {});

std::string to_json_line(const TrajectoryRecord& record);
TrajectoryRecord parse_json_line(const std::string& line);
void write_trajectory(const std::vector<TrajectoryRecord>& records, const std::string& path);
std::vector<TrajectoryRecord> read_trajectory(const std::string& path);

}  // namespace avsim::rollout
