#include "diffender/diffusion.hpp"

#include "diffender/errors.hpp"

#include <algorithm>
#include <cmath>

namespace diffender {

namespace {

void check_step(int t, const NoiseSchedule& sched) {
    if (t < 0 || t >= sched.T) throw ParamError("time step out of range");
}

}  // namespace

Tensor forward_noise_with(const Tensor& x0_pm, int t, const NoiseSchedule& sched, const Tensor& eps) {
    check_step(t, sched);
    if (!x0_pm.same_shape(eps)) throw ShapeError("noise shape mismatch");
    const double a = std::sqrt(sched.alpha_bar[t]);
    const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
    Tensor x_t(x0_pm.channels(), x0_pm.height(), x0_pm.width());
    for (std::size_t i = 0; i < x_t.size(); ++i) x_t[i] = a * x0_pm[i] + b * eps[i];
    return x_t;
}

Tensor forward_noise(const Image& x0, int t, const NoiseSchedule& sched, RngStream& rng, Tensor* eps_out) {
    validate_image(x0);
    Tensor eps(x0.channels(), x0.height(), x0.width());
    for (double& v : eps.values()) v = rng.normal();
    Tensor x_t = forward_noise_with(to_diffusion_space(x0), t, sched, eps);
    if (eps_out) *eps_out = std::move(eps);
    return x_t;
}

Tensor x0_from_eps(const Tensor& x_t, int t, const NoiseSchedule& sched, const Tensor& eps_hat) {
    check_step(t, sched);
    const double ab = sched.alpha_bar[t];
    if (ab < kAlphaBarFloor) throw NumericalError("alpha_bar below floor; step too close to T");
    const double inv_a = 1.0 / std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Tensor x0(x_t.channels(), x_t.height(), x_t.width());
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = (x_t[i] - b * eps_hat[i]) * inv_a;
    return x0;
}

Image predict_x0_one_step(const Tensor& x_t, int t, const Conditioning& cond, const DenoiserModel& model,
                          const NoiseSchedule& sched, const MaskChannels* mc) {
    check_step(t, sched);
    if (sched.alpha_bar[t] < kAlphaBarFloor) throw NumericalError("alpha_bar below floor; step too close to T");
    const Tensor eps_hat = model.predict_eps(x_t, t, cond, mc);
    return from_diffusion_space(x0_from_eps(x_t, t, sched, eps_hat));
}

Tensor ancestral_step(const Tensor& x_t, const Tensor& x0_hat, int t, int s, const NoiseSchedule& sched,
                      RngStream& rng) {
    const double ab_t = sched.alpha_bar[t];
    const double ab_s = sched.alpha_bar[s];
    const double alpha_ts = ab_t / ab_s;
    const double beta_ts = 1.0 - alpha_ts;
    const double denom = 1.0 - ab_t;
    const double c0 = std::sqrt(ab_s) * beta_ts / denom;
    const double ct = std::sqrt(alpha_ts) * (1.0 - ab_s) / denom;
    const double sigma = std::sqrt(std::max(0.0, beta_ts * (1.0 - ab_s) / denom));
    Tensor out(x_t.channels(), x_t.height(), x_t.width());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0_hat[i] + ct * x_t[i] + sigma * rng.normal();
    return out;
}

namespace {

/// Runs the reverse chain over `steps` (descending, last = 0) starting at x.
Tensor reverse_chain(Tensor x, const std::vector<int>& steps, const Conditioning& cond, const DenoiserModel& model,
                     const NoiseSchedule& sched, const MaskChannels* mc, RngStream& rng) {
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const int t = steps[i];
        const Tensor eps_hat = model.predict_eps(x, t, cond, mc);
        // Early steps of a long chain can sit below the inversion floor;
        // fall back to the clamped estimate there.
        const double ab = std::max(sched.alpha_bar[t], kAlphaBarFloor);
        Tensor x0(x.channels(), x.height(), x.width());
        const double inv_a = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - sched.alpha_bar[t]);
        for (std::size_t k = 0; k < x0.size(); ++k) x0[k] = std::clamp((x[k] - b * eps_hat[k]) * inv_a, -1.0, 1.0);
        if (i + 1 == steps.size()) return x0;
        x = ancestral_step(x, x0, t, steps[i + 1], sched, rng);
    }
    return x;
}

}  // namespace

Image inpaint(const Image& x_known, const BinaryMask& mask, const Conditioning& cond, const DenoiserModel& model,
              const NoiseSchedule& sched, int steps, RngStream& rng, Image* generated_out) {
    if (steps < 1) throw ParamError("inpaint needs at least one step");
    if (!model.supports_inpaint_channels()) throw ParamError("denoiser lacks inpainting channels");
    check_mask_shape(x_known, mask);
    validate_image(x_known);

    const MaskChannels mc = MaskChannels::from(mask, x_known);
    Tensor x(x_known.channels(), x_known.height(), x_known.width());
    for (double& v : x.values()) v = rng.normal();
    const Tensor x0 = reverse_chain(std::move(x), respaced_steps(sched.T - 1, steps), cond, model, sched, &mc, rng);
    Image generated = from_diffusion_space(x0);

    Image out = x_known;
    for (int y = 0; y < out.height(); ++y)
        for (int xx = 0; xx < out.width(); ++xx) {
            if (!mask(y, xx)) continue;
            for (int c = 0; c < out.channels(); ++c) out(c, y, xx) = generated(c, y, xx);
        }
    if (generated_out) *generated_out = std::move(generated);
    return out;
}

Image diffpure_baseline(const Image& x_adv, double t_star, const DenoiserModel& model, const NoiseSchedule& sched,
                        RngStream& rng, int max_steps) {
    validate_image(x_adv);
    const int k = ratio_to_step(t_star, sched);
    if (k == 0) return x_adv;
    Tensor x_t = forward_noise(x_adv, k, sched, rng);
    const int count = max_steps > 0 ? std::min(max_steps, k + 1) : k + 1;
    const Tensor x0 = reverse_chain(std::move(x_t), respaced_steps(k, count), Conditioning::empty(model.cond_dim()),
                                    model, sched, nullptr, rng);
    return from_diffusion_space(x0);
}

}  // namespace diffender
