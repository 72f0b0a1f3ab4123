#include "diffender/restoration.hpp"

#include "diffender/diffusion.hpp"
#include "diffender/errors.hpp"

namespace diffender {

Image restore(const Image& x_adv, const BinaryMask& mask, const Conditioning& prompt_R, const DenoiserModel& model,
              const NoiseSchedule& sched, const DefenseConfig& cfg, RngStream& rng) {
    check_mask_shape(x_adv, mask);
    if (cfg.inpaint_steps < 1) throw ParamError("inpaint needs at least one step");
    if (!mask.any()) return x_adv;
    return inpaint(x_adv, mask, prompt_R, model, sched, cfg.inpaint_steps, rng);
}

Image zero_fill(const Image& x_adv, const BinaryMask& mask) {
    check_mask_shape(x_adv, mask);
    Image out = x_adv;
    for (int c = 0; c < out.channels(); ++c)
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x)
                if (mask(y, x)) out(c, y, x) = 0.0;
    return out;
}

}  // namespace diffender
