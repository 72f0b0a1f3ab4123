#pragma once

#include "diffender/config.hpp"
#include "diffender/denoiser.hpp"
#include "diffender/image.hpp"
#include "diffender/localization.hpp"
#include "diffender/mask_refine.hpp"
#include "diffender/rng.hpp"
#include "diffender/schedule.hpp"

#include <memory>
#include <string>

namespace diffender {

/// Backward-pass state of one defense call.
class DefenseTape {
public:
    virtual ~DefenseTape() = default;
};

struct DefenseResult {
    Image output;
    SoftMask soft;
    BinaryMask mask;
    bool no_patch = true;
    std::shared_ptr<const DefenseTape> tape;
};

struct DefenseGrads {
    Tensor d_x;
    Vector d_prompt_L;  // w.r.t. the pooled localization prompt
    Vector d_prompt_R;  // w.r.t. the pooled restoration prompt
};

/// Input purification applied in front of a classifier.
class Defense {
public:
    virtual ~Defense() = default;
    virtual std::string name() const = 0;
    /// With keep_tape, the result carries state for backward().
    virtual DefenseResult run(const Image& x, const RngStream& rng, bool keep_tape = false) const = 0;
    /// Approximate gradient of a loss on the output (and optionally on the
    /// soft mask) back to the input and the prompts.
    virtual DefenseGrads backward(const DefenseResult& r, const Tensor& g_out, const SoftMask* g_soft = nullptr) const = 0;

    Image apply(const Image& x, const RngStream& rng) const { return run(x, rng).output; }
};

class IdentityDefense final : public Defense {
public:
    std::string name() const override { return "none"; }
    DefenseResult run(const Image& x, const RngStream& rng, bool keep_tape = false) const override;
    DefenseGrads backward(const DefenseResult& r, const Tensor& g_out, const SoftMask* g_soft = nullptr) const override;
};

enum class RestoreMode { Inpaint, ZeroFill };

/// Localize → refine → restore. The backward pass treats binarization and
/// refinement as identity (straight-through) and replaces the inpainting
/// sampler by a single x̂₀ prediction of the mask-conditioned denoiser at step(t*).
class DiffenderDefense final : public Defense {
public:
    DiffenderDefense(const DenoiserModel& model, const NoiseSchedule& sched, DefenseConfig cfg,
                     Conditioning prompt_L, Conditioning prompt_R, RestoreMode mode = RestoreMode::Inpaint,
                     std::string name = "DIFFender");

    std::string name() const override { return name_; }
    DefenseResult run(const Image& x, const RngStream& rng, bool keep_tape = false) const override;
    DefenseGrads backward(const DefenseResult& r, const Tensor& g_out, const SoftMask* g_soft = nullptr) const override;

    const DefenseConfig& config() const { return cfg_; }
    RestoreMode mode() const { return mode_; }
    void set_prompts(Conditioning prompt_L, Conditioning prompt_R);

private:
    class Tape;

    const DenoiserModel* model_;
    const NoiseSchedule* sched_;
    DefenseConfig cfg_;
    Conditioning prompt_L_, prompt_R_;
    RestoreMode mode_;
    std::string name_;
};

/// Global purification: noise the whole image to t* and denoise it. Backward
/// treats the purifier as identity.
class DiffPureDefense final : public Defense {
public:
    DiffPureDefense(const DenoiserModel& model, const NoiseSchedule& sched, double t_star, int max_steps = 0);

    std::string name() const override { return "DiffPure"; }
    DefenseResult run(const Image& x, const RngStream& rng, bool keep_tape = false) const override;
    DefenseGrads backward(const DefenseResult& r, const Tensor& g_out, const SoftMask* g_soft = nullptr) const override;

private:
    const DenoiserModel* model_;
    const NoiseSchedule* sched_;
    double t_star_;
    int max_steps_;
};

}  // namespace diffender
