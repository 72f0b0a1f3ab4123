#include "diffender/defense.hpp"

#include "diffender/diffusion.hpp"
#include "diffender/errors.hpp"
#include "diffender/restoration.hpp"

#include <cmath>

namespace diffender {

namespace {

// Substream keys; localization repetitions use 0..m-1.
constexpr std::uint64_t kRestoreStream = 0x5e570000ULL;
constexpr std::uint64_t kSurrogateStream = 0x5e570001ULL;

}  // namespace

DefenseResult IdentityDefense::run(const Image& x, const RngStream&, bool) const {
    DefenseResult r;
    r.output = x;
    r.soft = SoftMask(x.height(), x.width());
    r.mask = BinaryMask(x.height(), x.width());
    return r;
}

DefenseGrads IdentityDefense::backward(const DefenseResult&, const Tensor& g_out, const SoftMask*) const {
    return {g_out, Vector(), Vector()};
}

DiffPureDefense::DiffPureDefense(const DenoiserModel& model, const NoiseSchedule& sched, double t_star, int max_steps)
    : model_(&model), sched_(&sched), t_star_(t_star), max_steps_(max_steps) {
    if (t_star < 0.0 || t_star > 1.0) throw ParamError("t_star must lie in [0, 1]");
}

DefenseResult DiffPureDefense::run(const Image& x, const RngStream& rng, bool) const {
    RngStream r = rng;
    DefenseResult res;
    res.output = diffpure_baseline(x, t_star_, *model_, *sched_, r, max_steps_);
    res.soft = SoftMask(x.height(), x.width());
    res.mask = BinaryMask(x.height(), x.width());
    return res;
}

DefenseGrads DiffPureDefense::backward(const DefenseResult&, const Tensor& g_out, const SoftMask*) const {
    return {g_out, Vector(), Vector()};
}

class DiffenderDefense::Tape final : public DefenseTape {
public:
    Image input;
    std::shared_ptr<const LocalizationTape> loc;
    std::unique_ptr<DenoiserTape> den;
    Tensor u;        // unclamped surrogate x̂₀, diffusion space
    Image g;         // clamped surrogate in pixel space
    double a = 1.0, b = 0.0;
};

DiffenderDefense::DiffenderDefense(const DenoiserModel& model, const NoiseSchedule& sched, DefenseConfig cfg,
                                   Conditioning prompt_L, Conditioning prompt_R, RestoreMode mode, std::string name)
    : model_(&model), sched_(&sched), cfg_(cfg), prompt_L_(std::move(prompt_L)), prompt_R_(std::move(prompt_R)),
      mode_(mode), name_(std::move(name)) {
    cfg_.validate();
    if (mode_ == RestoreMode::Inpaint && !model.supports_inpaint_channels())
        throw ParamError("restoration needs a denoiser with inpainting channels");
}

void DiffenderDefense::set_prompts(Conditioning prompt_L, Conditioning prompt_R) {
    prompt_L_ = std::move(prompt_L);
    prompt_R_ = std::move(prompt_R);
}

DefenseResult DiffenderDefense::run(const Image& x, const RngStream& rng, bool keep_tape) const {
    validate_image(x);
    std::shared_ptr<Tape> tape = keep_tape ? std::make_shared<Tape>() : nullptr;
    DefenseResult r;
    r.soft = estimate_soft_mask(x, cfg_, prompt_L_, *model_, *sched_, rng, nullptr, tape ? &tape->loc : nullptr);
    RefineResult ref = refine(r.soft, cfg_);
    r.mask = std::move(ref.mask);
    r.no_patch = ref.no_patch;
    if (mode_ == RestoreMode::ZeroFill) {
        r.output = zero_fill(x, r.mask);
    } else {
        RngStream sub = rng.substream(kRestoreStream);
        r.output = restore(x, r.mask, prompt_R_, *model_, *sched_, cfg_, sub);
    }

    if (tape) {
        tape->input = x;
        if (mode_ == RestoreMode::Inpaint) {
            const int k = ratio_to_step(cfg_.t_star, *sched_);
            tape->a = std::sqrt(sched_->alpha_bar[k]);
            tape->b = std::sqrt(1.0 - sched_->alpha_bar[k]);
            const MaskChannels mc = MaskChannels::from(r.mask, x);
            RngStream sub = rng.substream(kSurrogateStream);
            Tensor eps(x.channels(), x.height(), x.width());
            for (double& v : eps.values()) v = sub.normal();
            const Tensor x_s = forward_noise_with(mc.known, k, *sched_, eps);
            const Tensor eps_hat = model_->predict_eps(x_s, k, prompt_R_, &mc, &tape->den);
            tape->u = x0_from_eps(x_s, k, *sched_, eps_hat);
            tape->g = from_diffusion_space(tape->u);
        }
        r.tape = std::move(tape);
    }
    return r;
}

DefenseGrads DiffenderDefense::backward(const DefenseResult& r, const Tensor& g_out, const SoftMask* g_soft) const {
    const auto* tape = dynamic_cast<const Tape*>(r.tape.get());
    if (!tape) throw ParamError("defense result was not recorded with keep_tape");
    const Image& x = tape->input;
    if (!g_out.same_shape(x.tensor())) throw ShapeError("output gradient shape mismatch");
    const int C = x.channels(), H = x.height(), W = x.width();
    const BinaryMask& M = r.mask;

    DefenseGrads out{Tensor(C, H, W), Vector::Zero(model_->cond_dim()), Vector::Zero(model_->cond_dim())};
    SoftMask g_mask(H, W);
    if (g_soft) {
        if (g_soft->height() != H || g_soft->width() != W) throw ShapeError("soft-mask gradient shape mismatch");
        g_mask = *g_soft;
    }

    // output = (1−M)·x + M·g, with g = 0 for zero filling
    Tensor g_u(C, H, W);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                const double go = g_out(c, y, xx);
                const double fill = mode_ == RestoreMode::Inpaint ? tape->g(c, y, xx) : 0.0;
                g_mask(y, xx) += go * (fill - x(c, y, xx));
                if (!M(y, xx)) {
                    out.d_x(c, y, xx) += go;
                } else if (mode_ == RestoreMode::Inpaint) {
                    const double p = 0.5 * (tape->u(c, y, xx) + 1.0);
                    if (p > 0.0 && p < 1.0) g_u(c, y, xx) = 0.5 * go;
                }
            }

    if (mode_ == RestoreMode::Inpaint) {
        // u = (x_s − b·ε̂)/a,  x_s = a·known + b·ε,  known = 2x − 1 outside M
        const double a = tape->a, b = tape->b;
        Tensor g_eps = g_u;
        g_eps *= -b / a;
        const DenoiserGrads dg = model_->backward(*tape->den, g_eps, nullptr);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    if (M(y, xx)) continue;
                    const double g_xs = g_u(c, y, xx) / a + dg.d_xt(c, y, xx);
                    out.d_x(c, y, xx) += 2.0 * (a * g_xs + dg.d_known(c, y, xx));
                }
        if (dg.d_cond.size()) out.d_prompt_R = dg.d_cond;
    }

    const LocalizationGrads lg = localization_backward(*tape->loc, binarize_backward(r.soft, g_mask), *model_);
    out.d_x += lg.d_x;
    out.d_prompt_L = lg.d_prompt;
    return out;
}

}  // namespace diffender
