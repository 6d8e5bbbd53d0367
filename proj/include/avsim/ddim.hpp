#pragma once

// Deterministic DDIM sampling over an abstract noise-prediction network.

#include "avsim/posmap.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace avsim::predictor {

// A frame slot: dense width x height x channels, channel-interleaved.
struct Latent {
  int width = 0;
  int height = 0;
  int channels = 0;
  Eigen::VectorXd data;

  bool same_shape(const Latent& o) const {
    return width == o.width && height == o.height && channels == o.channels &&
           data.size() == o.data.size();
  }
};

// Slots ordered [t-2, t-1, t, t+1]; the last one is the noisy sample.
struct ContextPack {
  std::array<Latent, 4> frames;

  const Latent& noisy() const { return frames[3]; }
};

ContextPack pack_context(std::span<const Latent, 3> previous, const Latent& next);
std::array<Latent, 4> unpack_context(const ContextPack& pack);

// Conditioning tokens: action_index(a) for actions, kUnconditional otherwise.
inline constexpr int kUnconditional = -1;

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  // Noise prediction with the shape of pack.noisy(); must be deterministic.
  virtual Eigen::VectorXd evaluate(const ContextPack& pack, int timestep, int token) const = 0;
};

struct DdimSchedule {
  int train_steps = 1000;
  std::vector<double> betas;
  std::vector<double> alphas_cumprod;
  std::vector<int> timesteps;  // strictly decreasing

  void validate() const;
};

struct ScheduleConfig {
  int train_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int sampling_steps = 10;
};

// Linear betas, timesteps T-1 - floor(i*T/S) for i = 0..S-1.
DdimSchedule make_schedule(const ScheduleConfig& config = {});

// Effective noise: eps_u + w (eps_c - eps_u); one evaluation when w is 0 or 1.
Eigen::VectorXd guided_noise(const Denoiser& denoiser, const ContextPack& pack, int timestep,
                             int token, double guidance_w);

// eta = 0 sampling from seeded standard normal noise; returns the final x0.
Latent ddim_sample(const Denoiser& denoiser, const DdimSchedule& schedule,
                   std::span<const Latent, 3> context, int token, double guidance_w,
                   std::uint64_t seed);

// The x_t a perfect-noise denoiser must invert: sqrt(ab) x0 + sqrt(1-ab) eps.
Eigen::VectorXd noise_to(const DdimSchedule& schedule, int timestep, const Eigen::VectorXd& x0,
                         const Eigen::VectorXd& eps);
// eps such that x_t = sqrt(ab) x0 + sqrt(1-ab) eps.
Eigen::VectorXd exact_noise(const DdimSchedule& schedule, int timestep, const Eigen::VectorXd& x_t,
                            const Eigen::VectorXd& x0);

// Identity codec between atlases and latents (background encoded as zero).
Latent encode_identity(const posmap::PositionMapAtlas& atlas);
// Decodes onto the layout and mask of `support`; background is zeroed.
posmap::PositionMapAtlas decode_identity(const Latent& latent,
                                         const posmap::PositionMapAtlas& support);

}  // namespace avsim::predictor
