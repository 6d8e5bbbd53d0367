#pragma once

// Pluggable next-frame predictors: the kinematic reference and DDIM over a
// denoiser. Predictors are immutable; per-session state is threaded through.

#include "avsim/ddim.hpp"
#include "avsim/kinematic.hpp"
#include "avsim/posmap.hpp"

#include <functional>
#include <memory>
#include <span>
#include <string>

namespace avsim::predictor {

struct PredictorState {
  virtual ~PredictorState() = default;
};
using StatePtr = std::shared_ptr<const PredictorState>;

struct Prediction {
  posmap::PositionMapAtlas atlas;
  StatePtr state;
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual StatePtr initial_state() const = 0;
  virtual Prediction predict(const StatePtr& state,
                             std::span<const posmap::PositionMapAtlas, 3> context,
                             ActionLabel action) const = 0;
};

// Shared avatar data both predictors need.
struct Avatar {
  std::shared_ptr<const posmap::AtlasRasterizer> rasterizer;
  Rig rig;
  double s = 1.0;
  Vec3 pivot = Vec3::Zero();  // rest-pose waist-pixel root, meters

  static Avatar make(std::shared_ptr<const posmap::AtlasRasterizer> rasterizer, Rig rig);
};

struct KinematicPredictorState : PredictorState {
  KinematicState kinematics;
};

// Regenerates geometry from its state and renders it into the normalized
// frame of context[2]: the normalization offset is inferred from the root of
// context[2] so that frame-t geometry coincides with the context.
class KinematicPredictor : public Predictor {
 public:
  KinematicPredictor(Avatar avatar, KinematicParams params);

  std::string name() const override { return "kinematic"; }
  StatePtr initial_state() const override;
  Prediction predict(const StatePtr& state, std::span<const posmap::PositionMapAtlas, 3> context,
                     ActionLabel action) const override;

  const Avatar& avatar() const { return avatar_; }
  const KinematicParams& params() const { return params_; }

  // Standing atlas at the origin: the rest pose normalized about its root.
  posmap::PositionMapAtlas standing_atlas() const;

 private:
  Avatar avatar_;
  KinematicParams params_;
};

// What a denoiser factory sees for one prediction round.
struct DenoiseRequest {
  std::span<const posmap::PositionMapAtlas, 3> context;
  ActionLabel action;
  const posmap::PositionMapAtlas* target = nullptr;  // kinematic prediction, if available
};

using DenoiserProvider =
    std::function<std::shared_ptr<const Denoiser>(const DenoiseRequest& request)>;

// Perfect-noise denoiser toward fixed clean slots: conditional tokens aim at
// `conditional`, the unconditional token at `unconditional`.
class TargetDenoiser : public Denoiser {
 public:
  TargetDenoiser(DdimSchedule schedule, Eigen::VectorXd conditional, Eigen::VectorXd unconditional);
  Eigen::VectorXd evaluate(const ContextPack& pack, int timestep, int token) const override;

 private:
  DdimSchedule schedule_;
  Eigen::VectorXd conditional_;
  Eigen::VectorXd unconditional_;
};

struct DdimConfig {
  ScheduleConfig schedule;
  double guidance_w = 1.0;
  std::uint64_t seed = 0;
  std::string denoiser = "kinematic-target";
};

struct DdimPredictorState : PredictorState {
  StatePtr inner;          // kinematic state behind the default denoiser
  std::uint64_t round = 0;
};

// DDIM through the identity codec. The default provider wraps a kinematic
// predictor: the conditional path aims at its prediction, the unconditional
// path at context[2] (stand still).
class DdimPredictor : public Predictor {
 public:
  DdimPredictor(std::shared_ptr<const KinematicPredictor> kinematic, DdimConfig config,
                DenoiserProvider provider = {});

  std::string name() const override { return "ddim"; }
  StatePtr initial_state() const override;
  Prediction predict(const StatePtr& state, std::span<const posmap::PositionMapAtlas, 3> context,
                     ActionLabel action) const override;

  const DdimSchedule& schedule() const { return schedule_; }

 private:
  std::shared_ptr<const KinematicPredictor> kinematic_;
  DdimConfig config_;
  DdimSchedule schedule_;
  DenoiserProvider provider_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t round);

}  // namespace avsim::predictor
