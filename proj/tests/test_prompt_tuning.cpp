#include "diffender/errors.hpp"
#include "diffender/prompt_tuning.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace diffender;
using namespace testing_support;

namespace {

const NoiseSchedule& sched() {
    static const NoiseSchedule s = make_schedule(100, 1e-4, 0.05);
    return s;
}

ToyClassifier small_classifier() { return ToyClassifier(3, 4, 7, {4, 6, 8}); }

FewShotSet tiny_set(int k) {
    FewShotSet set;
    for (int i = 0; i < k; ++i) {
        FewShotSample s;
        s.clean = random_image(8, 8, 3, 100 + i);
        s.adv = s.clean;
        s.mask = BinaryMask(8, 8);
        for (int y = 2; y < 5; ++y)
            for (int x = 2; x < 5; ++x) {
                s.mask(y, x) = 1;
                for (int c = 0; c < 3; ++c) s.adv(c, y, x) = (x + y + c) % 2;
            }
        set.push_back(s);
    }
    return set;
}

}  // namespace

TEST(LossCe, PerfectPredictionNearZero) {
    RngStream r(1);
    const BinaryMask m = random_mask(8, 8, r, 0.4);
    EXPECT_LE(loss_ce(m, m.as_soft()), 1e-6);
}

TEST(LossCe, HalfHalfIsLogTwo) {
    BinaryMask m(1, 2);
    m[0] = 1;
    EXPECT_NEAR(loss_ce(m, SoftMask(1, 2, 0.5)), std::log(2.0), 1e-15);
}

TEST(LossCe, ClampKeepsItFinite) {
    const double l = loss_ce(BinaryMask(3, 3), SoftMask(3, 3, 1.0));
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_NEAR(l, -std::log(1e-7), 1e-6);
}

TEST(LossCe, ShapeMismatch) {
    EXPECT_THROW(loss_ce(BinaryMask(2, 2), SoftMask(2, 3)), ShapeError);
}

TEST(LossCe, GradientMatchesFiniteDifference) {
    RngStream r(2);
    const BinaryMask m = random_mask(8, 8, r, 0.5);
    SoftMask p(8, 8);
    for (auto& v : p.values()) v = r.uniform(0.05, 0.95);
    SoftMask g;
    loss_ce(m, p, &g);
    const auto num = numeric_grad(p.values(), [&] { return loss_ce(m, p); });
    EXPECT_LT(max_rel_err(g.values(), num), 1e-3);
}

TEST(LossL1, Cases) {
    const Image x = random_image(8, 8, 3, 3, 0.0, 0.9);
    EXPECT_EQ(loss_l1(x, x), 0.0);
    Image y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += 0.1;
    EXPECT_NEAR(loss_l1(y, x), 0.1, 1e-12);
    EXPECT_THROW(loss_l1(Image(2, 2, 3), Image(2, 3, 3)), ShapeError);
}

TEST(LossL1, MatchesBruteForce) {
    const Image a = random_image(8, 8, 3, 4), b = random_image(8, 8, 3, 5);
    double s = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) s += std::fabs(a(c, y, x) - b(c, y, x));
    EXPECT_NEAR(loss_l1(a, b), s / 192.0, 1e-9);
}

TEST(LossL1, GradientMatchesFiniteDifference) {
    Image a = random_image(8, 8, 3, 6);
    const Image b = random_image(8, 8, 3, 7);
    Tensor g;
    loss_l1(a, b, &g);
    const auto num = numeric_grad(a.tensor().values(), [&] { return loss_l1(a, b); });
    EXPECT_LT(max_rel_err(g.values(), num), 1e-3);
}

TEST(LossPerceptual, IdenticalInputsZero) {
    const ToyClassifier clf = small_classifier();
    const Image x = random_image(8, 8, 3, 8);
    EXPECT_NEAR(loss_perceptual(x, x, clf, PerceptualWeights::all_layers(clf)), 0.0, 1e-15);
}

TEST(LossPerceptual, OrthogonalUnitFeaturesGiveTwo) {
    const IdentityFeatureClassifier clf;
    Image a(1, 1, 2), b(1, 1, 2);
    a(0, 0, 0) = 1.0;
    b(1, 0, 0) = 1.0;
    EXPECT_NEAR(loss_perceptual(a, b, clf, {{"id"}, {}}), 2.0, 1e-9);
}

TEST(LossPerceptual, ChannelWeightScalesQuadratically) {
    const IdentityFeatureClassifier clf;
    const Image a = random_image(4, 4, 3, 9), b = random_image(4, 4, 3, 10);
    const double base = loss_perceptual(a, b, clf, {{"id"}, {}});
    PerceptualWeights w{{"id"}, {{"id", Vector::Constant(3, 3.0)}}};
    EXPECT_NEAR(loss_perceptual(a, b, clf, w), 9.0 * base, 1e-12);
}

TEST(LossPerceptual, MissingLayer) {
    const ToyClassifier clf = small_classifier();
    const Image x = random_image(8, 8, 3, 11);
    EXPECT_THROW(loss_perceptual(x, x, clf, {{"block9"}, {}}), LayerError);
}

TEST(LossPerceptual, GradientMatchesFiniteDifference) {
    const ToyClassifier clf = small_classifier();
    Image a = random_image(8, 8, 3, 12);
    const Image b = random_image(8, 8, 3, 13);
    const PerceptualWeights pw = PerceptualWeights::all_layers(clf);
    Tensor g;
    loss_perceptual(a, b, clf, pw, &g);
    const auto num = numeric_grad(a.tensor().values(), [&] { return loss_perceptual(a, b, clf, pw); });
    EXPECT_LT(max_rel_err(g.values(), num, 1e-2), 1e-3);
}

TEST(LossTotal, SumOfParts) {
    const ToyClassifier clf = small_classifier();
    const PerceptualWeights pw = PerceptualWeights::all_layers(clf);
    RngStream r(14);
    const BinaryMask m = random_mask(8, 8, r, 0.3);
    const SoftMask p = random_soft(8, 8, r);
    const Image a = random_image(8, 8, 3, 15), b = random_image(8, 8, 3, 16);
    const LossBreakdown lb = loss_total(m, p, a, b, clf, pw, {0.5, 2.0, 3.0});
    EXPECT_NEAR(lb.total,
                0.5 * loss_ce(m, p) + 2.0 * loss_l1(a, b) + 3.0 * loss_perceptual(a, b, clf, pw), 1e-12);
    const LossBreakdown zero = loss_total(m, m.as_soft(), a, a, clf, pw);
    EXPECT_LE(zero.total, 1e-6);
}

TEST(InitPrompt, ManualTokenFillsFirstRow) {
    const ToyDenoiser m = small_denoiser();
    RngStream r(17);
    const PromptEmbedding e = init_prompt({"adversarial"}, m.vocabulary(), 16, PromptRole::Localization, r);
    ASSERT_EQ(e.n(), 16);
    EXPECT_EQ(Vector(e.vectors.row(0).transpose()), m.vocabulary().embed("adversarial"));
    EXPECT_NE(Vector(e.vectors.row(1).transpose()), Vector::Zero(e.dim()));
    EXPECT_EQ(e.init_source, "manual:adversarial");
}

TEST(InitPrompt, RandomReproducibleBySeed) {
    const ToyDenoiser m = small_denoiser();
    RngStream a(18), b(18), c(19);
    const auto ea = init_prompt({}, m.vocabulary(), 4, PromptRole::Restoration, a);
    const auto eb = init_prompt({}, m.vocabulary(), 4, PromptRole::Restoration, b);
    const auto ec = init_prompt({}, m.vocabulary(), 4, PromptRole::Restoration, c);
    EXPECT_EQ(ea.vectors, eb.vectors);
    EXPECT_NE(ea.vectors, ec.vectors);
    EXPECT_EQ(ea.init_source, "random");
}

TEST(PromptEmbedding, CheckpointRoundTrip) {
    const ToyDenoiser m = small_denoiser();
    RngStream r(20);
    const auto e = init_prompt({"clean"}, m.vocabulary(), 5, PromptRole::Restoration, r);
    const auto path = std::filesystem::temp_directory_path() / "diffender_prompt_rt.ckpt";
    e.save(path);
    const auto back = PromptEmbedding::load(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back.vectors, e.vectors);
    EXPECT_EQ(back.role, PromptRole::Restoration);
    EXPECT_EQ(back.init_source, e.init_source);
}

TEST(TunePrompts, ZeroStepsAndZeroRateAreIdentity) {
    const ToyDenoiser m = small_denoiser();
    const ToyClassifier clf = small_classifier();
    RngStream r(21);
    const auto L = init_prompt({"adversarial"}, m.vocabulary(), 4, PromptRole::Localization, r);
    const auto R = init_prompt({"clean"}, m.vocabulary(), 4, PromptRole::Restoration, r);
    TuneOptions o;
    o.steps = 0;
    o.inpaint_steps = 2;
    auto [L0, R0] = tune_prompts(tiny_set(2), L, R, o, m, sched(), DefenseConfig{}, clf,
                                 PerceptualWeights::all_layers(clf), RngStream(1));
    EXPECT_EQ(L0.vectors, L.vectors);
    EXPECT_EQ(R0.vectors, R.vectors);
    o.steps = 3;
    o.lr = 0.0;
    TuneTrace trace;
    auto [L1, R1] = tune_prompts(tiny_set(2), L, R, o, m, sched(), DefenseConfig{}, clf,
                                 PerceptualWeights::all_layers(clf), RngStream(1), &trace);
    EXPECT_EQ(L1.vectors, L.vectors);
    EXPECT_EQ(R1.vectors, R.vectors);
    EXPECT_EQ(trace.steps.size(), 3u);
    EXPECT_EQ(trace.epoch_mean.size(), 2u);
}

TEST(TunePrompts, UpdatesPromptsAndIsDeterministic) {
    const ToyDenoiser m = small_denoiser();
    const ToyClassifier clf = small_classifier();
    RngStream r(22);
    const auto L = init_prompt({"adversarial"}, m.vocabulary(), 4, PromptRole::Localization, r);
    const auto R = init_prompt({"clean"}, m.vocabulary(), 4, PromptRole::Restoration, r);
    TuneOptions o;
    o.steps = 2;
    o.inpaint_steps = 2;
    const auto pw = PerceptualWeights::all_layers(clf);
    auto a = tune_prompts(tiny_set(2), L, R, o, m, sched(), DefenseConfig{}, clf, pw, RngStream(2));
    auto b = tune_prompts(tiny_set(2), L, R, o, m, sched(), DefenseConfig{}, clf, pw, RngStream(2));
    EXPECT_NE(a.first.vectors, L.vectors);
    EXPECT_EQ(a.first.vectors, b.first.vectors);
    EXPECT_EQ(a.second.vectors, b.second.vectors);
}

TEST(TunePrompts, Errors) {
    const ToyDenoiser m = small_denoiser();
    const ToyClassifier clf = small_classifier();
    RngStream r(23);
    const auto L = init_prompt({}, m.vocabulary(), 2, PromptRole::Localization, r);
    const auto pw = PerceptualWeights::all_layers(clf);
    TuneOptions o;
    o.steps = 1;
    o.inpaint_steps = 2;
    EXPECT_THROW(tune_prompts({}, L, L, o, m, sched(), DefenseConfig{}, clf, pw, RngStream(3)), DataError);
    o.weights.ce = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(tune_prompts(tiny_set(1), L, L, o, m, sched(), DefenseConfig{}, clf, pw, RngStream(3)),
                 DivergenceError);
}
