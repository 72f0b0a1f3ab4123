#include "diffender/defense.hpp"
#include "diffender/errors.hpp"
#include "diffender/diffusion.hpp"
#include "diffender/restoration.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace diffender;
using namespace testing_support;

namespace {

const NoiseSchedule& sched() {
    static const NoiseSchedule s = make_schedule(100, 1e-4, 0.05);
    return s;
}

}  // namespace

TEST(Restore, EmptyMaskReturnsInput) {
    const ToyDenoiser m = small_denoiser();
    const Image x = random_image(8, 8, 3, 1);
    RngStream rng(1);
    EXPECT_EQ(restore(x, BinaryMask(8, 8), Conditioning::empty(8), m, sched(), DefenseConfig{}, rng), x);
}

TEST(Restore, RejectsZeroSteps) {
    const ToyDenoiser m = small_denoiser();
    DefenseConfig cfg;
    cfg.inpaint_steps = 0;
    RngStream rng(1);
    EXPECT_THROW(restore(Image(8, 8, 3), BinaryMask(8, 8, 1), Conditioning::empty(8), m, sched(), cfg, rng),
                 ParamError);
}

TEST(Restore, Deterministic) {
    const ToyDenoiser m = small_denoiser();
    const Image x = random_image(8, 8, 3, 2);
    RngStream r0(3);
    const BinaryMask mask = random_mask(8, 8, r0, 0.3);
    DefenseConfig cfg;
    cfg.inpaint_steps = 5;
    RngStream a(4), b(4);
    EXPECT_EQ(restore(x, mask, Conditioning::empty(8), m, sched(), cfg, a),
              restore(x, mask, Conditioning::empty(8), m, sched(), cfg, b));
}

TEST(Restore, UnmaskedPixelsBitExactOverRandomMasks) {
    const ToyDenoiser m = small_denoiser();
    DefenseConfig cfg;
    cfg.inpaint_steps = 2;
    const Vocabulary& v = m.vocabulary();
    for (int trial = 0; trial < 200; ++trial) {
        RngStream r(10, trial);
        const int h = r.uniform_int(4, 12), w = r.uniform_int(4, 12);
        const Image x = random_image(h, w, 3, 500 + trial);
        const BinaryMask mask = random_mask(h, w, r, r.uniform(0.0, 0.6));
        const Conditioning c = trial % 2 ? v.encode({"clean"}) : Conditioning::empty(8);
        RngStream rr(11, trial);
        const Image out = restore(x, mask, c, m, sched(), cfg, rr);
        RngStream ri(12, trial);
        const Image inp = inpaint(x, mask, c, m, sched(), 2, ri);
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    if (!mask(y, xx)) {
                        ASSERT_EQ(out(ch, y, xx), x(ch, y, xx));
                        ASSERT_EQ(inp(ch, y, xx), x(ch, y, xx));
                    }
    }
}

TEST(ZeroFill, Cases) {
    const Image x = random_image(4, 4, 3, 5);
    EXPECT_EQ(zero_fill(x, BinaryMask(4, 4)), x);
    const Image black = zero_fill(x, BinaryMask(4, 4, 1));
    for (std::size_t i = 0; i < black.size(); ++i) EXPECT_EQ(black[i], 0.0);
    BinaryMask half(4, 4);
    for (int y = 0; y < 2; ++y)
        for (int xx = 0; xx < 4; ++xx) half(y, xx) = 1;
    const Image h = zero_fill(Image(4, 4, 3, 0.5), half);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 4; ++xx) EXPECT_EQ(h(c, y, xx), y < 2 ? 0.0 : 0.5);
}

TEST(Defense, IdentityPassesThrough) {
    const IdentityDefense d;
    const Image x = random_image(5, 5, 3, 6);
    const DefenseResult r = d.run(x, RngStream(1));
    EXPECT_EQ(r.output, x);
    EXPECT_EQ(r.mask.count(), 0u);
}

TEST(Defense, PipelineDeterministicAndComposited) {
    const ToyDenoiser m = small_denoiser();
    DefenseConfig cfg;
    cfg.inpaint_steps = 3;
    cfg.tau_bin = 0.3;
    cfg.tau_smooth = 0.3;
    const Vocabulary& v = m.vocabulary();
    const DiffenderDefense d(m, sched(), cfg, v.encode({"adversarial"}), v.encode({"clean"}));
    const Image x = random_image(8, 8, 3, 7);
    const DefenseResult a = d.run(x, RngStream(5, 1)), b = d.run(x, RngStream(5, 1));
    EXPECT_EQ(a.output, b.output);
    EXPECT_EQ(a.mask, b.mask);
    EXPECT_EQ(a.no_patch, !a.mask.any());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int xx = 0; xx < 8; ++xx)
                if (!a.mask(y, xx)) {
                    EXPECT_EQ(a.output(c, y, xx), x(c, y, xx));
                }
}

TEST(Defense, NoRestoreZeroFillsMask) {
    const ToyDenoiser m = small_denoiser();
    DefenseConfig cfg;
    cfg.tau_bin = 0.3;
    cfg.tau_smooth = 0.3;
    const Vocabulary& v = m.vocabulary();
    const DiffenderDefense d(m, sched(), cfg, v.encode({"adversarial"}), v.encode({"clean"}), RestoreMode::ZeroFill);
    const Image x = random_image(8, 8, 3, 8);
    const DefenseResult r = d.run(x, RngStream(2));
    EXPECT_EQ(r.output, zero_fill(x, r.mask));
}

TEST(Defense, BackwardNeedsTape) {
    const ToyDenoiser m = small_denoiser();
    const DiffenderDefense d(m, sched(), DefenseConfig{}, Conditioning::empty(8), Conditioning::empty(8));
    const Image x = random_image(8, 8, 3, 9);
    const DefenseResult r = d.run(x, RngStream(3));
    EXPECT_THROW(d.backward(r, Tensor(3, 8, 8)), ParamError);
    const DefenseResult rt = d.run(x, RngStream(3), true);
    const DefenseGrads g = d.backward(rt, Tensor(3, 8, 8, 1.0));
    EXPECT_TRUE(g.d_x.same_shape(x.tensor()));
    EXPECT_EQ(g.d_prompt_L.size(), 8);
}
