#include "avsim/predictor.hpp"

namespace avsim::predictor {

namespace {

template <class T>
const T& state_as(const StatePtr& state, const char* who) {
  const auto* s = dynamic_cast<const T*>(state.get());
  if (s == nullptr) fail(ErrorCode::InvalidArgument, std::string(who) + ": foreign predictor state");
  return *s;
}

std::vector<Vec3> affine(std::span<const Vec3> v, double s, const Vec3& offset) {
  std::vector<Vec3> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = s * v[i] + offset;
  return out;
}

}  // namespace

Avatar Avatar::make(std::shared_ptr<const posmap::AtlasRasterizer> rasterizer, Rig rig) {
  if (!rasterizer) fail(ErrorCode::InvalidArgument, "null rasterizer");
  Avatar a;
  const auto& ref = rasterizer->reference();
  rig.validate(ref.vertex_count());
  a.s = ingest::compute_global_scale(ref);
  a.pivot = rasterizer->sample_root(ref.vertices);
  a.rasterizer = std::move(rasterizer);
  a.rig = std::move(rig);
  return a;
}

// ---- kinematic ----

KinematicPredictor::KinematicPredictor(Avatar avatar, KinematicParams params)
    : avatar_(std::move(avatar)), params_(params) {
  if (!avatar_.rasterizer) fail(ErrorCode::InvalidArgument, "avatar without rasterizer");
  params_.validate();
}

StatePtr KinematicPredictor::initial_state() const {
  return std::make_shared<KinematicPredictorState>();
}

posmap::PositionMapAtlas KinematicPredictor::standing_atlas() const {
  const auto& ref = avatar_.rasterizer->reference();
  const Vec3 offset = Vec3::Constant(0.5) - avatar_.s * avatar_.pivot;
  return avatar_.rasterizer->render(affine(ref.vertices, avatar_.s, offset));
}

Prediction KinematicPredictor::predict(const StatePtr& state,
                                       std::span<const posmap::PositionMapAtlas, 3> context,
                                       ActionLabel action) const {
  if (!is_valid_action(action)) fail(ErrorCode::UnknownAction, "predict");
  const auto& current = state_as<KinematicPredictorState>(state, "kinematic predictor");
  const auto& ras = *avatar_.rasterizer;
  const auto& ref = ras.reference();

  const auto pose_t = kinematic_pose(current.kinematics, ref, avatar_.rig, params_, avatar_.pivot);
  auto next = std::make_shared<KinematicPredictorState>();
  next->kinematics = kinematic_advance(current.kinematics, action, params_);
  const auto pose_next = kinematic_pose(next->kinematics, ref, avatar_.rig, params_, avatar_.pivot);

  const Vec3 root_ctx = posmap::extract_root(context[2], ras.waist_pixels());
  const Vec3 offset = root_ctx - avatar_.s * ras.sample_root(pose_t);
  Prediction out{ras.render(affine(pose_next, avatar_.s, offset)), std::move(next)};
  if (!out.atlas.same_support(context[2])) {
    fail(ErrorCode::MaskMismatch, "context atlas does not come from this avatar");
  }
  return out;
}

// ---- ddim ----

TargetDenoiser::TargetDenoiser(DdimSchedule schedule, Eigen::VectorXd conditional,
                               Eigen::VectorXd unconditional)
    : schedule_(std::move(schedule)),
      conditional_(std::move(conditional)),
      unconditional_(std::move(unconditional)) {
  if (conditional_.size() != unconditional_.size()) {
    fail(ErrorCode::ShapeMismatch, "target slots differ in size");
  }
}

Eigen::VectorXd TargetDenoiser::evaluate(const ContextPack& pack, int timestep, int token) const {
  const auto& x0 = token == kUnconditional ? unconditional_ : conditional_;
  if (pack.noisy().data.size() != x0.size()) fail(ErrorCode::ShapeMismatch, "target denoiser");
  return exact_noise(schedule_, timestep, pack.noisy().data, x0);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t round) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (round + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

DdimPredictor::DdimPredictor(std::shared_ptr<const KinematicPredictor> kinematic, DdimConfig config,
                             DenoiserProvider provider)
    : kinematic_(std::move(kinematic)),
      config_(std::move(config)),
      schedule_(make_schedule(config_.schedule)),
      provider_(std::move(provider)) {
  if (!kinematic_) fail(ErrorCode::InvalidArgument, "ddim predictor needs a kinematic source");
  if (!(config_.guidance_w >= 0.0)) fail(ErrorCode::InvalidArgument, "guidance_w must be >= 0");
  if (!provider_) {
    if (config_.denoiser != "kinematic-target") {
      fail(ErrorCode::InvalidArgument, "unknown denoiser plugin '" + config_.denoiser + "'");
    }
    provider_ = [schedule = schedule_](const DenoiseRequest& req) -> std::shared_ptr<const Denoiser> {
      return std::make_shared<TargetDenoiser>(schedule, encode_identity(*req.target).data,
                                              encode_identity(req.context[2]).data);
    };
  }
}

StatePtr DdimPredictor::initial_state() const {
  auto s = std::make_shared<DdimPredictorState>();
  s->inner = kinematic_->initial_state();
  return s;
}

Prediction DdimPredictor::predict(const StatePtr& state,
                                  std::span<const posmap::PositionMapAtlas, 3> context,
                                  ActionLabel action) const {
  if (!is_valid_action(action)) fail(ErrorCode::UnknownAction, "predict");
  const auto& current = state_as<DdimPredictorState>(state, "ddim predictor");
  auto target = kinematic_->predict(current.inner, context, action);

  const auto denoiser = provider_(DenoiseRequest{context, action, &target.atlas});
  if (!denoiser) fail(ErrorCode::InvalidArgument, "denoiser provider returned nothing");

  const std::array<Latent, 3> z = {encode_identity(context[0]), encode_identity(context[1]),
                                   encode_identity(context[2])};
  const Latent sample = ddim_sample(*denoiser, schedule_, z, action_index(action),
                                    config_.guidance_w, mix_seed(config_.seed, current.round));

  auto next = std::make_shared<DdimPredictorState>();
  next->inner = std::move(target.state);
  next->round = current.round + 1;
  return {decode_identity(sample, context[2]), std::move(next)};
}

}  // namespace avsim::predictor
