#include "diffender/attack.hpp"

#include "diffender/errors.hpp"

#include <cmath>

namespace diffender {

double PatchSpec::area_frac() const {
    return static_cast<double>(side) * side / (static_cast<double>(image_h) * image_w);
}

BinaryMask PatchSpec::mask() const {
    validate();
    BinaryMask m(image_h, image_w);
    for (int y = row; y < row + side; ++y)
        for (int x = col; x < col + side; ++x) m(y, x) = 1;
    return m;
}

void PatchSpec::validate() const {
    if (side < 1) throw BoundsError("patch side must be positive");
    if (row < 0 || col < 0 || row + side > image_h || col + side > image_w)
        throw BoundsError("patch leaves the image");
    if (content.height() != side || content.width() != side) throw ShapeError("patch content has the wrong size");
}

int patch_side_for(double area_frac, int height, int width) {
    if (!(area_frac > 0.0 && area_frac <= 1.0)) throw ParamError("patch area fraction must lie in (0,1]");
    const int side = static_cast<int>(std::lround(std::sqrt(area_frac * height * width)));
    return std::clamp(side, 1, std::min(height, width));
}

Image apply_patch(const Image& x, const PatchSpec& spec) {
    spec.validate();
    if (spec.image_h != x.height() || spec.image_w != x.width()) throw BoundsError("patch spec is for another size");
    if (spec.content.channels() != x.channels()) throw ShapeError("patch channel mismatch");
    Image out = x;
    for (int c = 0; c < x.channels(); ++c)
        for (int y = 0; y < spec.side; ++y)
            for (int xx = 0; xx < spec.side; ++xx) out(c, spec.row + y, spec.col + xx) = spec.content(c, y, xx);
    return out;
}

namespace {

PatchSpec random_patch(const Image& x, const AttackOptions& opts, RngStream& rng) {
    PatchSpec s;
    s.image_h = x.height();
    s.image_w = x.width();
    s.side = patch_side_for(opts.area_frac, x.height(), x.width());
    s.row = rng.uniform_int(0, x.height() - s.side);
    s.col = rng.uniform_int(0, x.width() - s.side);
    s.content = Image(s.side, s.side, x.channels());
    for (double& v : s.content.tensor().values()) v = opts.init == PatchInit::Gray ? 0.5 : rng.uniform();
    return s;
}

/// Loss and input gradient of one candidate; `defense` may be null.
double evaluate(const Image& patched, int label, const ClassifierModel& clf, const Defense* defense,
                const RngStream& rng, Tensor* grad) {
    DefenseResult dr;
    const Image* input = &patched;
    if (defense) {
        dr = defense->run(patched, rng, grad != nullptr);
        input = &dr.output;
    }
    std::unique_ptr<ClassifierTape> tape;
    const Vector z = clf.logits(*input, grad ? &tape : nullptr);
    Vector g;
    const double loss = cross_entropy(z, label, grad ? &g : nullptr);
    if (grad) {
        Tensor gx = clf.backward(*tape, g, {}, nullptr);
        *grad = defense ? defense->backward(dr, gx).d_x : std::move(gx);
    }
    return loss;
}

AttackResult run_attack(const Image& x, int label, const ClassifierModel& clf, const Defense* defense,
                        const AttackOptions& opts, RngStream& rng) {
    validate_image(x);
    if (opts.iters < 0) throw ParamError("iteration count must be non-negative");
    PatchSpec spec = random_patch(x, opts, rng);
    const RngStream base = rng.substream(0xa77ac0ULL);

    AttackResult res;
    res.spec = spec;
    res.image = apply_patch(x, spec);
    Tensor grad;
    double best = evaluate(res.image, label, clf, defense, base.substream(0), opts.iters > 0 ? &grad : nullptr);
    res.best_loss.push_back(best);

    Image current = res.image;
    for (int it = 1; it <= opts.iters; ++it) {
        for (int c = 0; c < x.channels(); ++c)
            for (int y = 0; y < spec.side; ++y)
                for (int xx = 0; xx < spec.side; ++xx) {
                    const double g = grad(c, spec.row + y, spec.col + xx);
                    double& v = spec.content(c, y, xx);
                    v = std::clamp(v + opts.step * static_cast<double>((g > 0.0) - (g < 0.0)), 0.0, 1.0);
                }
        current = apply_patch(x, spec);
        const bool more = it < opts.iters;
        const double loss =
            evaluate(current, label, clf, defense, base.substream(static_cast<std::uint64_t>(it)), more ? &grad : nullptr);
        if (loss > best) {
            best = loss;
            res.spec = spec;
            res.image = current;
        }
        res.best_loss.push_back(best);
    }
    return res;
}

}  // namespace

AttackResult patch_attack(const Image& x, int label, const ClassifierModel& clf, const AttackOptions& opts,
                          RngStream& rng) {
    return run_attack(x, label, clf, nullptr, opts, rng);
}

AttackResult bpda_adaptive_attack(const Image& x, int label, const ClassifierModel& clf, const Defense& defense,
                                  const AttackOptions& opts, RngStream& rng) {
    return run_attack(x, label, clf, &defense, opts, rng);
}

}  // namespace diffender
