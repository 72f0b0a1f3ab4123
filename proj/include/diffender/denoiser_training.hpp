#pragma once

#include "diffender/toy_data.hpp"
#include "diffender/toy_denoiser.hpp"

#include <functional>
#include <string>
#include <vector>

namespace diffender {

struct DenoiserTrainConfig {
    int epochs = 12;
    int batch = 8;
    double lr = 2e-3;
    double lr_final = 1e-4;
    double grad_clip = 1.0;
    /// Probability of pasting a random sticker; such samples are captioned
    /// with the "adversarial" token instead of "clean".
    double p_sticker = 0.5;
    int sticker_min = 3;
    int sticker_max = 10;
    /// Probability of training the inpainting path with a random rectangle mask.
    double p_inpaint = 0.5;
    double inpaint_min_frac = 0.03;
    double inpaint_max_frac = 0.3;
    /// Whole-caption dropout to the learned null embedding.
    double p_null = 0.1;
    double p_token_drop = 0.25;
    /// Std of an extra random context row, so pooled prompts with padding rows stay in-distribution.
    double cond_noise = 0.1;
    std::uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> epoch_loss;
};

/// Vocabulary used by the toy backend: class names plus state tokens.
std::vector<std::string> toy_vocabulary_tokens(const std::vector<std::string>& class_names);

inline const std::string kTokenClean = "clean";
inline const std::string kTokenAdversarial = "adversarial";

/// Trains the conditional ε-predictor on labeled images with uniform
/// time steps. Throws DataError on empty data or inconsistent shapes.
ToyDenoiser train_toy_denoiser(const ToyDataset& data, const NoiseSchedule& sched, ToyDenoiserConfig model_cfg,
                               const DenoiserTrainConfig& cfg, TrainReport* report = nullptr,
                               const std::function<void(int, double)>& on_epoch = {});

}  // namespace diffender
