#pragma once

#include "diffender/config.hpp"
#include "diffender/denoiser.hpp"
#include "diffender/image.hpp"
#include "diffender/rng.hpp"
#include "diffender/schedule.hpp"

namespace diffender {

/// Inpaints the masked region under prompt_R with cfg.inpaint_steps sampler
/// steps. Pixels outside the mask are returned bit-equal to x_adv.
Image restore(const Image& x_adv, const BinaryMask& mask, const Conditioning& prompt_R, const DenoiserModel& model,
              const NoiseSchedule& sched, const DefenseConfig& cfg, RngStream& rng);

/// Sets masked pixels to 0.
Image zero_fill(const Image& x_adv, const BinaryMask& mask);

}  // namespace diffender
