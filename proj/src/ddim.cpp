#include "avsim/ddim.hpp"

#include <cmath>
#include <random>

namespace avsim::predictor {

ContextPack pack_context(std::span<const Latent, 3> previous, const Latent& next) {
  for (const auto& slot : previous) {
    if (!slot.same_shape(next)) fail(ErrorCode::ShapeMismatch, "context slots differ in shape");
  }
  return {{previous[0], previous[1], previous[2], next}};
}

std::array<Latent, 4> unpack_context(const ContextPack& pack) { return pack.frames; }

void DdimSchedule::validate() const {
  if (train_steps < 1 || betas.size() != static_cast<std::size_t>(train_steps) ||
      alphas_cumprod.size() != betas.size()) {
    fail(ErrorCode::InvalidArgument, "schedule arrays do not match train_steps");
  }
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0)) fail(ErrorCode::InvalidArgument, "beta outside (0,1)");
    if (i > 0 && !(alphas_cumprod[i] < alphas_cumprod[i - 1])) {
      fail(ErrorCode::InvalidArgument, "cumulative alpha not strictly decreasing");
    }
  }
  if (timesteps.empty()) fail(ErrorCode::InvalidArgument, "no sampling timesteps");
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    if (timesteps[i] < 0 || timesteps[i] >= train_steps) {
      fail(ErrorCode::InvalidArgument, "timestep out of range");
    }
    if (i > 0 && timesteps[i] >= timesteps[i - 1]) {
      fail(ErrorCode::InvalidArgument, "timesteps not strictly decreasing");
    }
  }
}

DdimSchedule make_schedule(const ScheduleConfig& config) {
  if (config.train_steps < 1) fail(ErrorCode::InvalidArgument, "train_steps must be >= 1");
  if (config.sampling_steps < 1 || config.sampling_steps > config.train_steps) {
    fail(ErrorCode::InvalidArgument, "sampling_steps must be in [1, train_steps]");
  }
  DdimSchedule s;
  s.train_steps = config.train_steps;
  s.betas.resize(config.train_steps);
  s.alphas_cumprod.resize(config.train_steps);
  double prod = 1.0;
  for (int i = 0; i < config.train_steps; ++i) {
    const double frac = config.train_steps == 1 ? 0.0 : double(i) / (config.train_steps - 1);
    s.betas[i] = config.beta_start + frac * (config.beta_end - config.beta_start);
    prod *= 1.0 - s.betas[i];
    s.alphas_cumprod[i] = prod;
  }
  const long long T = config.train_steps, S = config.sampling_steps;
  for (long long i = 0; i < S; ++i) s.timesteps.push_back(static_cast<int>(T - 1 - (i * T) / S));
  s.validate();
  return s;
}

Eigen::VectorXd guided_noise(const Denoiser& denoiser, const ContextPack& pack, int timestep,
                             int token, double guidance_w) {
  if (!(guidance_w >= 0.0) || !std::isfinite(guidance_w)) {
    fail(ErrorCode::InvalidArgument, "guidance weight must be finite and >= 0");
  }
  if (guidance_w == 1.0) return denoiser.evaluate(pack, timestep, token);
  if (guidance_w == 0.0) return denoiser.evaluate(pack, timestep, kUnconditional);
  const Eigen::VectorXd eps_c = denoiser.evaluate(pack, timestep, token);
  const Eigen::VectorXd eps_u = denoiser.evaluate(pack, timestep, kUnconditional);
  return eps_u + guidance_w * (eps_c - eps_u);
}

Latent ddim_sample(const Denoiser& denoiser, const DdimSchedule& schedule,
                   std::span<const Latent, 3> context, int token, double guidance_w,
                   std::uint64_t seed) {
  schedule.validate();
  Latent x = context[2];
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data(i) = normal(rng);

  ContextPack pack = pack_context(context, x);
  Eigen::VectorXd x0;
  const auto& ts = schedule.timesteps;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double ab = schedule.alphas_cumprod[ts[i]];
    const double ab_prev = i + 1 < ts.size() ? schedule.alphas_cumprod[ts[i + 1]] : 1.0;
    const Eigen::VectorXd eps = guided_noise(denoiser, pack, ts[i], token, guidance_w);
    if (eps.size() != pack.frames[3].data.size()) {
      fail(ErrorCode::ShapeMismatch, "denoiser output has the wrong size");
    }
    if (!eps.allFinite()) {
      fail(ErrorCode::NonFinite, "denoiser produced non-finite values at step " + std::to_string(ts[i]));
    }
    x0 = (pack.frames[3].data - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    pack.frames[3].data = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps;
  }
  Latent out = context[2];
  out.data = std::move(x0);
  return out;
}

Eigen::VectorXd noise_to(const DdimSchedule& schedule, int timestep, const Eigen::VectorXd& x0,
                         const Eigen::VectorXd& eps) {
  const double ab = schedule.alphas_cumprod.at(timestep);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::VectorXd exact_noise(const DdimSchedule& schedule, int timestep, const Eigen::VectorXd& x_t,
                            const Eigen::VectorXd& x0) {
  const double ab = schedule.alphas_cumprod.at(timestep);
  return (x_t - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
}

Latent encode_identity(const posmap::PositionMapAtlas& atlas) {
  Latent z{atlas.width, atlas.height, 3, Eigen::VectorXd::Zero(3 * Eigen::Index(atlas.pixel_count()))};
  for (std::size_t i = 0; i < atlas.pixel_count(); ++i) {
    if (atlas.mask[i]) z.data.segment<3>(3 * i) = atlas.values[i];
  }
  return z;
}

posmap::PositionMapAtlas decode_identity(const Latent& latent,
                                         const posmap::PositionMapAtlas& support) {
  if (latent.width != support.width || latent.height != support.height || latent.channels != 3 ||
      latent.data.size() != 3 * Eigen::Index(support.pixel_count())) {
    fail(ErrorCode::ShapeMismatch, "latent does not match the support atlas");
  }
  posmap::PositionMapAtlas out = support;
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    out.values[i] = out.mask[i] ? Vec3(latent.data.segment<3>(3 * i)) : Vec3::Zero();
  }
  return out;
}

}  // namespace avsim::predictor
