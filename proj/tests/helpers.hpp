#pragma once

#include "diffender/classifier.hpp"
#include "diffender/conditioning.hpp"
#include "diffender/denoiser.hpp"
#include "diffender/image.hpp"
#include "diffender/rng.hpp"
#include "diffender/schedule.hpp"
#include "diffender/toy_denoiser.hpp"

#include <cmath>
#include <functional>
#include <memory>

namespace testing_support {

using namespace diffender;

inline Image random_image(int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    RngStream rng(seed, 0x1a6e);
    Image img(h, w, c);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform(lo, hi);
    return img;
}

inline BinaryMask random_mask(int h, int w, RngStream& rng, double p) {
    BinaryMask m(h, w);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(p);
    return m;
}

inline SoftMask random_soft(int h, int w, RngStream& rng) {
    SoftMask m(h, w);
    for (auto& v : m.values()) v = rng.uniform();
    return m;
}

/// Knows the clean image and returns the exact noise for it. Under a
/// non-empty prompt the prediction of channel 0 is shifted by `shift`
/// (pixel units) in x̂₀.
class CleanOracleDenoiser final : public DenoiserModel {
public:
    CleanOracleDenoiser(Image clean, const NoiseSchedule& sched, double shift = 0.0, int cond_dim = 4)
        : clean_(std::move(clean)), sched_(&sched), shift_(shift), cond_dim_(cond_dim) {}

    int channels() const override { return clean_.channels(); }
    int cond_dim() const override { return cond_dim_; }
    bool supports_inpaint_channels() const override { return true; }

    Tensor predict_eps(const Tensor& x_t, int t, const Conditioning& cond, const MaskChannels*,
                       std::unique_ptr<DenoiserTape>*) const override {
        const double s0 = std::sqrt(sched_->alpha_bar[t]), s1 = std::sqrt(1.0 - sched_->alpha_bar[t]);
        Tensor x0 = to_diffusion_space(clean_);
        if (!cond.is_empty)
            for (int y = 0; y < x0.height(); ++y)
                for (int x = 0; x < x0.width(); ++x) x0(0, y, x) += 2.0 * shift_;
        Tensor eps(x_t.channels(), x_t.height(), x_t.width());
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (x_t[i] - s0 * x0[i]) / s1;
        return eps;
    }

private:
    Image clean_;
    const NoiseSchedule* sched_;
    double shift_;
    int cond_dim_;
};

/// Returns a fixed tensor (or zeros) regardless of input.
class FixedEpsDenoiser final : public DenoiserModel {
public:
    explicit FixedEpsDenoiser(Tensor eps, int channels = 3) : eps_(std::move(eps)), channels_(channels) {}
    int channels() const override { return channels_; }
    int cond_dim() const override { return 4; }
    bool supports_inpaint_channels() const override { return true; }
    Tensor predict_eps(const Tensor& x_t, int, const Conditioning&, const MaskChannels*,
                       std::unique_ptr<DenoiserTape>*) const override {
        if (eps_.empty()) return Tensor(x_t.channels(), x_t.height(), x_t.width());
        return eps_;
    }

private:
    Tensor eps_;
    int channels_;
};

/// Features: one layer "id" equal to the input, scaled per channel.
/// Logits: fixed, so predictions are input-independent.
class IdentityFeatureClassifier final : public ClassifierModel {
public:
    explicit IdentityFeatureClassifier(int predicted = 0, int classes = 2) : pred_(predicted), classes_(classes) {}
    int num_classes() const override { return classes_; }
    std::vector<std::string> feature_layers() const override { return {"id"}; }
    Vector logits(const Image& x, std::unique_ptr<ClassifierTape>* tape) const override {
        if (tape) {
            *tape = std::make_unique<ClassifierTape>();
            (*tape)->features["id"] = x.tensor();
        }
        Vector l = Vector::Zero(classes_);
        l[pred_] = 1.0;
        return l;
    }
    Tensor backward(const ClassifierTape& tape, const Vector&, const std::map<std::string, Tensor>& g_features,
                    nn::GradMap*) const override {
        auto it = g_features.find("id");
        if (it != g_features.end()) return it->second;
        const Tensor& f = tape.features.at("id");
        return Tensor(f.channels(), f.height(), f.width());
    }

private:
    int pred_;
    int classes_;
};

/// Predicts class 1 when the mean pixel exceeds the threshold, else 0.
class BrightnessClassifier final : public ClassifierModel {
public:
    explicit BrightnessClassifier(double threshold = 0.5) : th_(threshold) {}
    int num_classes() const override { return 2; }
    std::vector<std::string> feature_layers() const override { return {}; }
    Vector logits(const Image& x, std::unique_ptr<ClassifierTape>* tape) const override {
        double m = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) m += x[i];
        m /= static_cast<double>(x.size());
        if (tape) *tape = std::make_unique<ClassifierTape>();
        Vector l(2);
        l << 0.0, 50.0 * (m - th_);
        return l;
    }
    Tensor backward(const ClassifierTape&, const Vector&, const std::map<std::string, Tensor>&,
                    nn::GradMap*) const override {
        return {};
    }

private:
    double th_;
};

inline ToyDenoiser small_denoiser(int channels = 3, std::uint64_t seed = 3) {
    ToyDenoiserConfig cfg;
    cfg.channels = channels;
    cfg.width = 8;
    cfg.dilations = {1, 2};
    cfg.cond_dim = 8;
    cfg.hidden = 16;
    cfg.time_embed = 8;
    cfg.num_steps = 100;
    Vocabulary vocab({"clean", "adversarial", "disk"}, cfg.cond_dim, seed + 1);
    return ToyDenoiser(cfg, vocab, seed);
}

/// Central difference of f along every element of `x`.
template <class Vec>
std::vector<double> numeric_grad(Vec& x, const std::function<double()>& f, double h = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        x[i] = v + h;
        const double fp = f();
        x[i] = v - h;
        const double fm = f();
        x[i] = v;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// max |a−b| / max(|b|, floor) over entries.
template <class A, class B>
double max_rel_err(const A& a, const B& b, double floor = 1e-3) {
    double e = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
    return e;
}

}  // namespace testing_support
