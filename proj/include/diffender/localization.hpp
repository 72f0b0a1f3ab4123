#pragma once

#include "diffender/config.hpp"
#include "diffender/denoiser.hpp"
#include "diffender/image.hpp"
#include "diffender/rng.hpp"
#include "diffender/schedule.hpp"

#include <memory>
#include <vector>

namespace diffender {

/// The two one-step predictions of one repetition, taken from the same noisy instance.
struct DifferencePair {
    Image x_a;  // under prompt_L
    Image x_b;  // under empty conditioning
    std::uint64_t noise_key = 0;
};

/// Noises x_adv once at step(t*) with the noise of repetition i, predicts x₀
/// under prompt_L and under empty text, and returns the channel-mean |x_a − x_b|.
/// Repetition i draws from rng.substream(i), so results do not depend on call order.
SoftMask aap_difference(const Image& x_adv, const DefenseConfig& cfg, const Conditioning& prompt_L,
                        const DenoiserModel& model, const NoiseSchedule& sched, const RngStream& rng, int i,
                        DifferencePair* pair = nullptr);

class LocalizationTape;

/// Mean of cfg.m difference maps divided by its maximum; an all-zero mean
/// stays zero. `repetitions` receives the unscaled per-repetition maps.
/// With `tape` set, keeps what localization_backward needs.
SoftMask estimate_soft_mask(const Image& x_adv, const DefenseConfig& cfg, const Conditioning& prompt_L,
                            const DenoiserModel& model, const NoiseSchedule& sched, const RngStream& rng,
                            std::vector<SoftMask>* repetitions = nullptr,
                            std::shared_ptr<const LocalizationTape>* tape = nullptr);

struct LocalizationGrads {
    Tensor d_x;       // pixel space
    Vector d_prompt;  // w.r.t. the pooled prompt_L conditioning
};

/// Backpropagates dL/d(soft mask) to the input image and the prompt.
/// Pixels where a prediction was clamped pass no gradient.
LocalizationGrads localization_backward(const LocalizationTape& tape, const SoftMask& g_soft,
                                        const DenoiserModel& model);

/// 1 where soft ≥ tau. Throws ParamError unless 0 < tau < 1.
BinaryMask binarize(const SoftMask& soft, double tau);

/// Straight-through gradient of binarize: dL/dsoft = dL/dmask.
SoftMask binarize_backward(const SoftMask& soft, const SoftMask& g_mask);

}  // namespace diffender
