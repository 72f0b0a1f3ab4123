#pragma once

#include "diffender/denoiser.hpp"
#include "diffender/image.hpp"
#include "diffender/rng.hpp"
#include "diffender/schedule.hpp"

namespace diffender {

/// Below this alpha_bar the one-step x₀ inversion is rejected.
inline constexpr double kAlphaBarFloor = 1e-4;

/// sqrt(ᾱ_t)·x0 + sqrt(1−ᾱ_t)·ε in diffusion space ([−1,1] for x0).
/// The noisy state is returned unclamped: clamping would bias the Gaussian
/// statistics and break the exact one-step inversion.
Tensor forward_noise(const Image& x0, int t, const NoiseSchedule& sched, RngStream& rng, Tensor* eps_out = nullptr);

/// Same as forward_noise with caller-supplied ε.
Tensor forward_noise_with(const Tensor& x0_pm, int t, const NoiseSchedule& sched, const Tensor& eps);

/// Unclamped (x_t − sqrt(1−ᾱ)·ε̂)/sqrt(ᾱ) in diffusion space.
Tensor x0_from_eps(const Tensor& x_t, int t, const NoiseSchedule& sched, const Tensor& eps_hat);

/// One-step x̂₀ prediction, clamped into pixel range.
/// Throws NumericalError if ᾱ_t < kAlphaBarFloor.
Image predict_x0_one_step(const Tensor& x_t, int t, const Conditioning& cond, const DenoiserModel& model,
                          const NoiseSchedule& sched, const MaskChannels* mc = nullptr);

/// One ancestral DDPM move from step t to step s < t given x̂₀ (diffusion space).
Tensor ancestral_step(const Tensor& x_t, const Tensor& x0_hat, int t, int s, const NoiseSchedule& sched,
                      RngStream& rng);

/// Mask-conditioned reverse sampling from pure noise over `steps` respaced
/// steps; the denoiser sees [x_t ‖ mask ‖ masked known image]. The result is
/// composited as mask·generated + (1−mask)·x_known, so unmasked pixels are
/// bit-identical to x_known. `generated_out` receives the raw sample.
Image inpaint(const Image& x_known, const BinaryMask& mask, const Conditioning& cond, const DenoiserModel& model,
              const NoiseSchedule& sched, int steps, RngStream& rng, Image* generated_out = nullptr);

/// Global purification: noise to step(t*), then an unconditional reverse
/// chain to step 0. `max_steps == 0` visits every step; otherwise the chain is
/// respaced to at most max_steps evaluations. t* = 0 returns x_adv.
Image diffpure_baseline(const Image& x_adv, double t_star, const DenoiserModel& model, const NoiseSchedule& sched,
                        RngStream& rng, int max_steps = 0);

}  // namespace diffender
