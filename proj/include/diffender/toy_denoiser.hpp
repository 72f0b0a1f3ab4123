#pragma once

#include "diffender/checkpoint.hpp"
#include "diffender/denoiser.hpp"
#include "diffender/schedule.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace diffender {

struct ToyDenoiserConfig {
    int channels = 3;
    int width = 32;
    std::vector<int> dilations{1, 2, 4, 8, 2, 1};
    int cond_dim = 32;
    int hidden = 64;
    int time_embed = 16;
    int num_steps = 1000;  // T of the schedule the model is trained on
};

/// Pixel-space conditional ε-predictor: a residual stack of dilated 3×3
/// convolutions with per-layer FiLM modulation driven by the time step and
/// the pooled text conditioning. Input channels are [x_t ‖ mask ‖ known],
/// i.e. 2C+1, so one network serves both plain denoising and inpainting.
class ToyDenoiser final : public DenoiserModel {
public:
    ToyDenoiser(ToyDenoiserConfig cfg, Vocabulary vocab, std::uint64_t init_seed);

    int channels() const override { return cfg_.channels; }
    int cond_dim() const override { return cfg_.cond_dim; }
    bool supports_inpaint_channels() const override { return true; }
    bool differentiable() const override { return true; }

    Tensor predict_eps(const Tensor& x_t, int t, const Conditioning& cond, const MaskChannels* mc,
                       std::unique_ptr<DenoiserTape>* tape = nullptr) const override;
    DenoiserGrads backward(const DenoiserTape& tape, const Tensor& g_eps, nn::GradMap* grads) const override;

    const ToyDenoiserConfig& config() const { return cfg_; }
    const Vocabulary& vocabulary() const { return vocab_; }
    std::vector<nn::Param*> params();
    std::vector<const nn::Param*> params() const;

    void save(const std::filesystem::path& path, const NoiseSchedule& sched, const nlohmann::json& extra = {}) const;
    /// Loads a checkpoint; the embedded schedule is written to `sched` when given.
    static ToyDenoiser load(const std::filesystem::path& path, NoiseSchedule* sched = nullptr);

private:
    struct Tape;

    ToyDenoiserConfig cfg_;
    Vocabulary vocab_;
    nn::Conv2d conv_in_;
    std::vector<nn::Conv2d> blocks_;
    nn::Conv2d conv_out_;
    nn::Linear t_proj_, c_proj_, h_proj_;
    std::vector<nn::Linear> film_;
    nn::Param null_embedding_;
};

}  // namespace diffender
