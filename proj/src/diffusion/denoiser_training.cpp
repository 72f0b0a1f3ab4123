#include "diffender/denoiser_training.hpp"

#include "diffender/diffusion.hpp"
#include "diffender/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>

namespace diffender {

std::vector<std::string> toy_vocabulary_tokens(const std::vector<std::string>& class_names) {
    std::vector<std::string> tokens = class_names;
    tokens.push_back(kTokenClean);
    tokens.push_back(kTokenAdversarial);
    tokens.push_back("image");
    return tokens;
}

namespace {

void check_dataset(const ToyDataset& data) {
    if (data.images.empty()) throw DataError("denoiser training needs at least one image");
    if (data.labels.size() != data.images.size()) throw DataError("labels do not match images");
    const Image& first = data.images.front();
    for (const auto& img : data.images) {
        if (!img.same_shape(first)) throw DataError("training images must share one shape");
    }
}

Conditioning sample_caption(const Vocabulary& vocab, const std::string& cls, bool sticker,
                            const DenoiserTrainConfig& cfg, RngStream& rng) {
    if (rng.bernoulli(cfg.p_null)) return Conditioning::empty(vocab.dim());
    std::vector<std::string> words;
    if (!cls.empty() && vocab.contains(cls) && !rng.bernoulli(cfg.p_token_drop)) words.push_back(cls);
    if (!rng.bernoulli(cfg.p_token_drop)) words.push_back(sticker ? kTokenAdversarial : kTokenClean);
    if (words.empty()) return Conditioning::empty(vocab.dim());
    Conditioning c = vocab.encode(words);
    if (cfg.cond_noise > 0.0) {
        c.vectors.conservativeResize(c.vectors.rows() + 1, Eigen::NoChange);
        for (int k = 0; k < c.dim(); ++k) c.vectors(c.vectors.rows() - 1, k) = cfg.cond_noise * rng.normal();
    }
    return c;
}

}  // namespace

ToyDenoiser train_toy_denoiser(const ToyDataset& data, const NoiseSchedule& sched, ToyDenoiserConfig model_cfg,
                               const DenoiserTrainConfig& cfg, TrainReport* report,
                               const std::function<void(int, double)>& on_epoch) {
    check_dataset(data);
    if (cfg.batch < 1 || cfg.epochs < 0) throw ParamError("invalid training schedule");
    model_cfg.channels = data.images.front().channels();
    model_cfg.num_steps = sched.T;

    Vocabulary vocab(toy_vocabulary_tokens(data.class_names), model_cfg.cond_dim, cfg.seed ^ 0xfeedULL);
    ToyDenoiser model(model_cfg, vocab, cfg.seed);
    nn::Adam opt(model.params(), {.lr = cfg.lr, .grad_clip = cfg.grad_clip});

    RngStream rng(cfg.seed, 0x7a1);
    const int n = static_cast<int>(data.size());
    const int steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
    const int H = data.images.front().height(), W = data.images.front().width();
    const int C = model_cfg.channels;

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
        double epoch_sum = 0.0;
        long epoch_count = 0;
        for (int s = 0; s < steps_per_epoch; ++s, ++step) {
            const double progress = total_steps > 1 ? static_cast<double>(step) / (total_steps - 1) : 0.0;
            opt.set_lr(cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * progress)));
            nn::GradMap grads;
            for (int b = 0; b < cfg.batch; ++b) {
                const int idx = order[(s * cfg.batch + b) % n];
                Image x0 = data.images[idx];
                const bool sticker = rng.bernoulli(cfg.p_sticker);
                if (sticker) paste_random_sticker(x0, rng, cfg.sticker_min, cfg.sticker_max);
                const std::string& cls =
                    data.class_names.empty() ? std::string() : data.class_names.at(data.labels[idx]);
                const Conditioning cond = sample_caption(model.vocabulary(), cls, sticker, cfg, rng);

                std::optional<MaskChannels> mc;
                if (rng.bernoulli(cfg.p_inpaint)) {
                    mc = MaskChannels::from(random_rect_mask(H, W, rng, cfg.inpaint_min_frac, cfg.inpaint_max_frac), x0);
                }
                const int t = rng.uniform_int(0, sched.T - 1);
                Tensor eps;
                const Tensor x_t = forward_noise(x0, t, sched, rng, &eps);

                std::unique_ptr<DenoiserTape> tape;
                const Tensor eps_hat = model.predict_eps(x_t, t, cond, mc ? &*mc : nullptr, &tape);
                Tensor g(C, H, W);
                double loss = 0.0;
                const double inv = 1.0 / static_cast<double>(eps.size());
                for (std::size_t k = 0; k < eps.size(); ++k) {
                    const double d = eps_hat[k] - eps[k];
                    loss += d * d * inv;
                    g[k] = 2.0 * d * inv / cfg.batch;
                }
                model.backward(*tape, g, &grads);
                epoch_sum += loss;
                ++epoch_count;
            }
            opt.step(grads);
        }
        const double mean = epoch_count ? epoch_sum / epoch_count : 0.0;
        if (!std::isfinite(mean)) throw DivergenceError("denoiser training diverged");
        if (report) report->epoch_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    return model;
}

}  // namespace diffender
