#include "diffender/localization.hpp"

#include "diffender/diffusion.hpp"
#include "diffender/errors.hpp"

#include <algorithm>
#include <cmath>

namespace diffender {

namespace {

struct Repetition {
    std::unique_ptr<DenoiserTape> tape_a, tape_b;
    Tensor x0_a, x0_b;  // unclamped, diffusion space
};

double sgn(double v) { return (v > 0.0) - (v < 0.0); }

int checked_step(const DefenseConfig& cfg, const NoiseSchedule& sched) {
    const int k = ratio_to_step(cfg.t_star, sched);
    if (sched.alpha_bar[k] < kAlphaBarFloor) throw NumericalError("alpha_bar below floor at t*");
    return k;
}

SoftMask channel_mean_abs(const Tensor& x0_a, const Tensor& x0_b) {
    const int C = x0_a.channels(), H = x0_a.height(), W = x0_a.width();
    SoftMask d(H, W);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double pa = std::clamp(0.5 * (x0_a(c, y, x) + 1.0), 0.0, 1.0);
                const double pb = std::clamp(0.5 * (x0_b(c, y, x) + 1.0), 0.0, 1.0);
                d(y, x) += std::abs(pa - pb) / C;
            }
    return d;
}

SoftMask run_repetition(const Image& x_adv, int k, const Conditioning& prompt_L, const DenoiserModel& model,
                        const NoiseSchedule& sched, const RngStream& rng, int i, Repetition* rep,
                        DifferencePair* pair) {
    RngStream sub = rng.substream(static_cast<std::uint64_t>(i));
    const Tensor x_t = forward_noise(x_adv, k, sched, sub);
    const Conditioning empty = Conditioning::empty(model.cond_dim());
    std::unique_ptr<DenoiserTape> ta, tb;
    const Tensor eps_a = model.predict_eps(x_t, k, prompt_L, nullptr, rep ? &ta : nullptr);
    const Tensor eps_b = model.predict_eps(x_t, k, empty, nullptr, rep ? &tb : nullptr);
    Tensor x0_a = x0_from_eps(x_t, k, sched, eps_a);
    Tensor x0_b = x0_from_eps(x_t, k, sched, eps_b);
    SoftMask d = channel_mean_abs(x0_a, x0_b);
    if (pair) {
        pair->x_a = from_diffusion_space(x0_a);
        pair->x_b = from_diffusion_space(x0_b);
        pair->noise_key = static_cast<std::uint64_t>(i);
    }
    if (rep) {
        rep->tape_a = std::move(ta);
        rep->tape_b = std::move(tb);
        rep->x0_a = std::move(x0_a);
        rep->x0_b = std::move(x0_b);
    }
    return d;
}

}  // namespace

class LocalizationTape {
public:
    std::vector<Repetition> reps;
    SoftMask mean;
    double max = 0.0;
    std::size_t argmax = 0;
    double sqrt_ab = 1.0, sqrt_1mab = 0.0;
    int channels = 0;
};

SoftMask aap_difference(const Image& x_adv, const DefenseConfig& cfg, const Conditioning& prompt_L,
                        const DenoiserModel& model, const NoiseSchedule& sched, const RngStream& rng, int i,
                        DifferencePair* pair) {
    validate_image(x_adv);
    return run_repetition(x_adv, checked_step(cfg, sched), prompt_L, model, sched, rng, i, nullptr, pair);
}

SoftMask estimate_soft_mask(const Image& x_adv, const DefenseConfig& cfg, const Conditioning& prompt_L,
                            const DenoiserModel& model, const NoiseSchedule& sched, const RngStream& rng,
                            std::vector<SoftMask>* repetitions, std::shared_ptr<const LocalizationTape>* tape) {
    if (cfg.m < 1) throw ParamError("m must be at least 1");
    validate_image(x_adv);
    const int k = checked_step(cfg, sched);
    auto t = tape ? std::make_shared<LocalizationTape>() : nullptr;
    if (t) t->reps.resize(cfg.m);

    SoftMask mean(x_adv.height(), x_adv.width());
    if (repetitions) repetitions->clear();
    for (int i = 0; i < cfg.m; ++i) {
        SoftMask d = run_repetition(x_adv, k, prompt_L, model, sched, rng, i, t ? &t->reps[i] : nullptr, nullptr);
        for (std::size_t p = 0; p < d.size(); ++p) mean[p] += d[p];
        if (repetitions) repetitions->push_back(std::move(d));
    }
    for (double& v : mean.values()) v /= cfg.m;

    double mx = 0.0;
    std::size_t arg = 0;
    for (std::size_t p = 0; p < mean.size(); ++p)
        if (mean[p] > mx) mx = mean[p], arg = p;
    SoftMask soft(mean.height(), mean.width());
    if (mx > 0.0)
        for (std::size_t p = 0; p < mean.size(); ++p) soft[p] = mean[p] / mx;

    if (t) {
        t->mean = std::move(mean);
        t->max = mx;
        t->argmax = arg;
        t->sqrt_ab = std::sqrt(sched.alpha_bar[k]);
        t->sqrt_1mab = std::sqrt(1.0 - sched.alpha_bar[k]);
        t->channels = x_adv.channels();
        *tape = std::move(t);
    }
    return soft;
}

LocalizationGrads localization_backward(const LocalizationTape& tape, const SoftMask& g_soft,
                                        const DenoiserModel& model) {
    const int H = tape.mean.height(), W = tape.mean.width(), C = tape.channels;
    if (g_soft.height() != H || g_soft.width() != W) throw ShapeError("soft-mask gradient shape mismatch");
    LocalizationGrads out{Tensor(C, H, W), Vector::Zero(model.cond_dim())};
    if (tape.max <= 0.0) return out;

    // soft = mean / max, with max = mean[argmax]
    SoftMask g_mean(H, W);
    double g_max = 0.0;
    for (std::size_t p = 0; p < g_mean.size(); ++p) {
        g_mean[p] = g_soft[p] / tape.max;
        g_max -= g_soft[p] * tape.mean[p] / (tape.max * tape.max);
    }
    g_mean[tape.argmax] += g_max;

    const double m = static_cast<double>(tape.reps.size());
    const double a = tape.sqrt_ab, b = tape.sqrt_1mab;
    for (const Repetition& rep : tape.reps) {
        Tensor g_x0a(C, H, W), g_x0b(C, H, W);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double ua = 0.5 * (rep.x0_a(c, y, x) + 1.0), ub = 0.5 * (rep.x0_b(c, y, x) + 1.0);
                    const double pa = std::clamp(ua, 0.0, 1.0), pb = std::clamp(ub, 0.0, 1.0);
                    const double g = g_mean(y, x) / (m * C) * sgn(pa - pb);
                    if (ua > 0.0 && ua < 1.0) g_x0a(c, y, x) = 0.5 * g;
                    if (ub > 0.0 && ub < 1.0) g_x0b(c, y, x) = -0.5 * g;
                }
        // x0 = (x_t − b·ε̂)/a
        Tensor g_eps_a = g_x0a, g_eps_b = g_x0b;
        g_eps_a *= -b / a;
        g_eps_b *= -b / a;
        const DenoiserGrads ga = model.backward(*rep.tape_a, g_eps_a, nullptr);
        const DenoiserGrads gb = model.backward(*rep.tape_b, g_eps_b, nullptr);
        // x_t = a·(2x − 1) + b·ε
        for (std::size_t i = 0; i < out.d_x.size(); ++i)
            out.d_x[i] += 2.0 * a * ((g_x0a[i] + g_x0b[i]) / a + ga.d_xt[i] + gb.d_xt[i]);
        if (ga.d_cond.size()) out.d_prompt += ga.d_cond;
    }
    return out;
}

BinaryMask binarize(const SoftMask& soft, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ParamError("binarization threshold must lie in (0,1)");
    BinaryMask out(soft.height(), soft.width());
    for (std::size_t i = 0; i < soft.size(); ++i) out[i] = soft[i] >= tau ? 1 : 0;
    return out;
}

SoftMask binarize_backward(const SoftMask& soft, const SoftMask& g_mask) {
    if (soft.height() != g_mask.height() || soft.width() != g_mask.width()) throw ShapeError("gradient shape mismatch");
    return g_mask;
}

}  // namespace diffender
