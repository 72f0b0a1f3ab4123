#include "diffender/errors.hpp"
#include "diffender/localization.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace diffender;
using namespace testing_support;

namespace {

const NoiseSchedule& sched() {
    static const NoiseSchedule s = make_schedule(100, 1e-4, 0.05);
    return s;
}

Conditioning some_prompt(int dim, std::uint64_t seed) {
    RngStream r(seed);
    RowMatrix v(2, dim);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = r.normal();
    return Conditioning::from_vectors(v);
}

}  // namespace

TEST(AapDifference, PromptBlindDenoiserGivesZeros) {
    const FixedEpsDenoiser blind{Tensor()};
    DefenseConfig cfg;
    cfg.t_star = 0.3;
    const SoftMask d = aap_difference(Image(8, 8, 3, 0.5), cfg, some_prompt(4, 1), blind, sched(), RngStream(1), 0);
    for (double v : d.values()) EXPECT_EQ(v, 0.0);
}

TEST(AapDifference, ChannelShiftAveragesOverChannels) {
    const Image gray(8, 8, 3, 0.5);
    const CleanOracleDenoiser oracle(gray, sched(), 0.2);
    DefenseConfig cfg;
    cfg.t_star = 0.5;
    DifferencePair pair;
    const SoftMask d = aap_difference(gray, cfg, some_prompt(4, 2), oracle, sched(), RngStream(2), 0, &pair);
    for (double v : d.values()) EXPECT_NEAR(v, 0.2 / 3.0, 1e-9);
    EXPECT_NEAR(pair.x_a(0, 3, 3) - pair.x_b(0, 3, 3), 0.2, 1e-9);
}

TEST(AapDifference, RepetitionIndexKeysNoise) {
    const ToyDenoiser m = small_denoiser();
    DefenseConfig cfg;
    const Image x = random_image(8, 8, 3, 3);
    const Conditioning p = some_prompt(8, 3);
    const RngStream rng(4);
    const SoftMask a0 = aap_difference(x, cfg, p, m, sched(), rng, 0);
    const SoftMask a1 = aap_difference(x, cfg, p, m, sched(), rng, 1);
    EXPECT_EQ(a0, aap_difference(x, cfg, p, m, sched(), rng, 0));
    EXPECT_NE(a0, a1);
}

TEST(SoftMask, SingleRepetitionIsRescaledDifference) {
    const ToyDenoiser m = small_denoiser();
    DefenseConfig cfg;
    cfg.m = 1;
    const Image x = random_image(8, 8, 3, 5);
    const Conditioning p = some_prompt(8, 5);
    const RngStream rng(6);
    const SoftMask d = aap_difference(x, cfg, p, m, sched(), rng, 0);
    const SoftMask s = estimate_soft_mask(x, cfg, p, m, sched(), rng);
    const double mx = *std::max_element(d.values().begin(), d.values().end());
    ASSERT_GT(mx, 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(s[i], d[i] / mx, 1e-15);
}

TEST(SoftMask, MeanOfStoredRepetitions) {
    const ToyDenoiser m = small_denoiser();
    DefenseConfig cfg;
    cfg.m = 3;
    const Image x = random_image(8, 8, 3, 7);
    std::vector<SoftMask> reps;
    const SoftMask s = estimate_soft_mask(x, cfg, some_prompt(8, 7), m, sched(), RngStream(8), &reps);
    ASSERT_EQ(reps.size(), 3u);
    std::vector<double> mean(s.size(), 0.0);
    for (const auto& r : reps)
        for (std::size_t i = 0; i < r.size(); ++i) mean[i] += r[i] / 3.0;
    const double mx = *std::max_element(mean.begin(), mean.end());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], mean[i] / mx, 1e-12);
    EXPECT_NO_THROW(validate_soft_mask(s));
}

TEST(SoftMask, AllZeroRepetitionsStayZero) {
    const FixedEpsDenoiser blind{Tensor()};
    DefenseConfig cfg;
    const SoftMask s = estimate_soft_mask(Image(8, 8, 3, 0.3), cfg, some_prompt(4, 9), blind, sched(), RngStream(9));
    for (double v : s.values()) {
        EXPECT_FALSE(std::isnan(v));
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Binarize, BelowThresholdIsZero) {
    const BinaryMask b = binarize(SoftMask(4, 4, 0.4), 0.5);
    EXPECT_EQ(b.count(), 0u);
}

TEST(Binarize, TieGoesToOne) {
    const BinaryMask b = binarize(SoftMask(4, 4, 0.5), 0.5);
    EXPECT_EQ(b.count(), 16u);
}

TEST(Binarize, ThresholdOutOfRange) {
    EXPECT_THROW(binarize(SoftMask(2, 2), 0.0), ParamError);
    EXPECT_THROW(binarize(SoftMask(2, 2), 1.0), ParamError);
    EXPECT_THROW(binarize(SoftMask(2, 2), 1.5), ParamError);
}

TEST(Binarize, StraightThroughIsIdentityOnScalars) {
    for (double s : {0.0, 0.2, 0.5, 0.9999, 1.0}) {
        for (double g : {-3.0, -0.1, 0.0, 0.7, 5.0}) {
            SoftMask soft(1, 1, s), gm(1, 1, g);
            EXPECT_EQ(binarize_backward(soft, gm)[0], g);
        }
    }
    EXPECT_THROW(binarize_backward(SoftMask(2, 2), SoftMask(2, 3)), ShapeError);
}

TEST(LocalizationBackward, MatchesFiniteDifference) {
    const ToyDenoiser m = small_denoiser();
    DefenseConfig cfg;
    cfg.m = 2;
    cfg.t_star = 0.2;
    Image x = random_image(6, 6, 3, 10, 0.3, 0.7);
    RowMatrix pv(1, 8);
    RngStream pr(11);
    for (Eigen::Index i = 0; i < pv.size(); ++i) pv.data()[i] = pr.normal();
    SoftMask probe(6, 6);
    for (auto& v : probe.values()) v = pr.normal();
    const RngStream rng(12);

    auto f = [&] {
        const SoftMask s = estimate_soft_mask(x, cfg, Conditioning::from_vectors(pv), m, sched(), rng);
        double acc = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) acc += probe[i] * s[i];
        return acc;
    };
    std::shared_ptr<const LocalizationTape> tape;
    estimate_soft_mask(x, cfg, Conditioning::from_vectors(pv), m, sched(), rng, nullptr, &tape);
    const LocalizationGrads g = localization_backward(*tape, probe, m);

    const auto num_x = numeric_grad(x.tensor().values(), f, 1e-6);
    EXPECT_LT(max_rel_err(g.d_x.values(), num_x, 1e-2), 1e-3);
    std::vector<double> pvec(pv.data(), pv.data() + pv.size());
    auto fp = [&] {
        std::copy(pvec.begin(), pvec.end(), pv.data());
        return f();
    };
    const auto num_p = numeric_grad(pvec, fp, 1e-6);
    std::copy(pvec.begin(), pvec.end(), pv.data());
    std::vector<double> ana(g.d_prompt.data(), g.d_prompt.data() + g.d_prompt.size());
    EXPECT_LT(max_rel_err(ana, num_p, 1e-2), 1e-3);
}
