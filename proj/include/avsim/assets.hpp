#pragma once

// Avatar asset directories and engine configuration. A pipeline built here
// is what both the CLI rollout and the service step, so the two stay
// bit-identical for the same avatar and predictor config.

#include "avsim/kinematic.hpp"
#include "avsim/pca.hpp"
#include "avsim/posmap.hpp"
#include "avsim/predictor.hpp"
#include "avsim/rollout.hpp"
#include "avsim/splat.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>

namespace avsim::assets {

struct AvatarAssets {
  std::string id;
  std::string dir;
  std::shared_ptr<const ingest::ReferenceMesh> reference;
  predictor::Rig rig;
  predictor::KinematicParams params;  // the avatar's motion model
  std::shared_ptr<const posmap::AtlasRasterizer> rasterizer;
  posmap::PositionMapAtlas standing;
  std::shared_ptr<const pca::PcaBasis> basis;            // null when absent
  std::shared_ptr<const splat::BaseAttributeMap> base;   // null when absent
  int upscale = 4;
  std::string manifest;  // raw manifest.json text, served to the viewer
};

// Reads manifest.json and the files it names. The standing atlas must have
// the rasterizer's support; the basis, when present, must match it too.
AvatarAssets load_avatar(const std::string& dir, const std::string& id = {});

struct PredictorConfig {
  std::string kind = "kinematic";  // "kinematic" | "ddim"
  std::optional<predictor::KinematicParams> kinematic;  // overrides the manifest
  predictor::DdimConfig ddim;
  bool use_basis = true;
  double root_tolerance = rollout::kDefaultRootTolerance;

  void validate() const;
};

PredictorConfig parse_predictor_config(const std::string& json_text);
std::string to_json(const PredictorConfig& config);

rollout::Pipeline make_pipeline(const AvatarAssets& avatar, const PredictorConfig& config);

struct ServiceLimits {
  double idle_timeout_seconds = 600.0;
  std::size_t max_sessions = 64;
  std::size_t max_points_per_frame = 4'000'000;
};

struct EngineConfig {
  std::string assets_dir;                     // avatars are subdirectories
  std::map<std::string, std::string> avatars; // explicit id -> dir registry
  PredictorConfig predictor;
  ServiceLimits limits;
  std::string static_dir;                     // viewer bundle, optional
};

EngineConfig parse_engine_config(const std::string& json_text);
EngineConfig load_engine_config(const std::string& path);

// Registry entry for `id`, else assets_dir/id when it holds a manifest.
std::optional<std::string> resolve_avatar(const EngineConfig& config, const std::string& id);

}  // namespace avsim::assets
