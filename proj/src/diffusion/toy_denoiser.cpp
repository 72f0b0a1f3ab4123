#include "diffender/toy_denoiser.hpp"

#include "diffender/errors.hpp"

#include <algorithm>

namespace diffender {

MaskChannels MaskChannels::plain(int channels, int height, int width) {
    return {Tensor(1, height, width, 1.0), Tensor(channels, height, width, 0.0)};
}

MaskChannels MaskChannels::from(const BinaryMask& m, const Image& known_image) {
    check_mask_shape(known_image, m);
    MaskChannels mc{Tensor(1, m.height(), m.width(), 0.0), to_diffusion_space(known_image)};
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m(y, x)) continue;
            mc.mask(0, y, x) = 1.0;
            for (int c = 0; c < mc.known.channels(); ++c) mc.known(c, y, x) = 0.0;
        }
    return mc;
}

DenoiserGrads DenoiserModel::backward(const DenoiserTape&, const Tensor&, nn::GradMap*) const {
    throw ParamError("denoiser does not support backpropagation");
}

struct ToyDenoiser::Tape final : DenoiserTape {
    int height = 0, width = 0;
    std::vector<RowMatrix> cols;  // per conv layer, conv_out last
    std::vector<Tensor> pre_film;
    std::vector<Tensor> pre_act;
    std::vector<Vector> film;  // [gamma ‖ beta] per layer
    Vector temb, cond, p1, h1, p2, h2;
    bool empty = false;
};

ToyDenoiser::ToyDenoiser(ToyDenoiserConfig cfg, Vocabulary vocab, std::uint64_t init_seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
    if (cfg_.dilations.empty()) throw ParamError("denoiser needs at least one conv layer");
    if (vocab_.dim() != cfg_.cond_dim && !vocab_.tokens().empty()) {
        throw ShapeError("vocabulary dim does not match cond_dim");
    }
    const int L = static_cast<int>(cfg_.dilations.size());
    const int W = cfg_.width;
    conv_in_ = nn::Conv2d("conv_in", 2 * cfg_.channels + 1, W, cfg_.dilations[0]);
    for (int i = 1; i < L; ++i) blocks_.emplace_back("block" + std::to_string(i), W, W, cfg_.dilations[i]);
    conv_out_ = nn::Conv2d("conv_out", W, cfg_.channels, 1);
    t_proj_ = nn::Linear("t_proj", cfg_.time_embed, cfg_.hidden);
    c_proj_ = nn::Linear("c_proj", cfg_.cond_dim, cfg_.hidden);
    h_proj_ = nn::Linear("h_proj", cfg_.hidden, cfg_.hidden);
    for (int i = 0; i < L; ++i) film_.emplace_back("film" + std::to_string(i), cfg_.hidden, 2 * W);
    null_embedding_ = nn::Param("null_embedding", {cfg_.cond_dim});

    RngStream rng(init_seed, 0xde1015e);
    conv_in_.init(rng);
    for (auto& b : blocks_) b.init(rng, 0.5);
    conv_out_.init(rng, 0.1);
    t_proj_.init(rng);
    c_proj_.init(rng);
    h_proj_.init(rng);
    for (auto& f : film_) f.init(rng, 0.1);
}

std::vector<nn::Param*> ToyDenoiser::params() {
    std::vector<nn::Param*> ps;
    auto add = [&](std::vector<nn::Param*> v) { ps.insert(ps.end(), v.begin(), v.end()); };
    add(conv_in_.params());
    for (auto& b : blocks_) add(b.params());
    add(conv_out_.params());
    add(t_proj_.params());
    add(c_proj_.params());
    add(h_proj_.params());
    for (auto& f : film_) add(f.params());
    ps.push_back(&null_embedding_);
    return ps;
}

std::vector<const nn::Param*> ToyDenoiser::params() const {
    auto ps = const_cast<ToyDenoiser*>(this)->params();
    return {ps.begin(), ps.end()};
}

Tensor ToyDenoiser::predict_eps(const Tensor& x_t, int t, const Conditioning& cond, const MaskChannels* mc,
                                std::unique_ptr<DenoiserTape>* tape_out) const {
    const int C = cfg_.channels, H = x_t.height(), Wd = x_t.width();
    if (x_t.channels() != C) throw ShapeError("denoiser input channel mismatch");
    if (t < 0 || t >= cfg_.num_steps) throw ParamError("time step out of range");
    if (!cond.is_empty && cond.dim() != cfg_.cond_dim) throw ShapeError("conditioning dim mismatch");

    auto tape = tape_out ? std::make_unique<Tape>() : nullptr;

    Tensor input(2 * C + 1, H, Wd);
    std::copy(x_t.values().begin(), x_t.values().end(), input.data());
    if (mc) {
        if (mc->mask.height() != H || mc->known.channels() != C) throw ShapeError("mask channels mismatch");
        std::copy(mc->mask.values().begin(), mc->mask.values().end(), input.data() + C * x_t.plane());
        std::copy(mc->known.values().begin(), mc->known.values().end(), input.data() + (C + 1) * x_t.plane());
    } else {
        std::fill(input.data() + C * x_t.plane(), input.data() + (C + 1) * x_t.plane(), 1.0);
    }

    const Vector temb = nn::sinusoidal_embedding(static_cast<double>(t) / cfg_.num_steps, cfg_.time_embed);
    Vector c = cond.is_empty ? Eigen::Map<const Vector>(null_embedding_.value.data(), cfg_.cond_dim) : cond.pooled();
    const Vector p1 = t_proj_.forward(temb) + c_proj_.forward(c);
    const Vector h1 = nn::silu(p1);
    const Vector p2 = h_proj_.forward(h1);
    const Vector h2 = nn::silu(p2);

    const int L = static_cast<int>(cfg_.dilations.size());
    if (tape) {
        tape->height = H;
        tape->width = Wd;
        tape->cols.resize(L + 1);
        tape->temb = temb;
        tape->cond = c;
        tape->p1 = p1;
        tape->h1 = h1;
        tape->p2 = p2;
        tape->h2 = h2;
        tape->empty = cond.is_empty;
    }

    Tensor a;
    for (int i = 0; i < L; ++i) {
        const nn::Conv2d& conv = i == 0 ? conv_in_ : blocks_[i - 1];
        Tensor y = conv.forward(i == 0 ? input : a, tape ? &tape->cols[i] : nullptr);
        const Vector gb = film_[i].forward(h2);
        Tensor z = y;
        auto zm = z.matrix();
        for (int ch = 0; ch < cfg_.width; ++ch) {
            zm.row(ch).array() = zm.row(ch).array() * (1.0 + gb[ch]) + gb[cfg_.width + ch];
        }
        Tensor s = z;
        nn::silu_inplace(s);
        if (i == 0) {
            a = std::move(s);
        } else {
            a += s;
        }
        if (tape) {
            tape->pre_film.push_back(std::move(y));
            tape->pre_act.push_back(std::move(z));
            tape->film.push_back(gb);
        }
    }
    Tensor eps = conv_out_.forward(a, tape ? &tape->cols[L] : nullptr);
    if (tape_out) *tape_out = std::move(tape);
    return eps;
}

DenoiserGrads ToyDenoiser::backward(const DenoiserTape& base, const Tensor& g_eps, nn::GradMap* grads) const {
    const auto* tape = dynamic_cast<const Tape*>(&base);
    if (!tape) throw ParamError("tape was not produced by this model");
    const int L = static_cast<int>(cfg_.dilations.size());
    const int H = tape->height, Wd = tape->width, Wc = cfg_.width;

    Tensor g_a = conv_out_.backward(g_eps, tape->cols[L], H, Wd, grads, true);
    Vector g_h2 = Vector::Zero(cfg_.hidden);
    Tensor g_input;
    for (int i = L - 1; i >= 0; --i) {
        const Tensor& y = tape->pre_film[i];
        const Tensor& z = tape->pre_act[i];
        const Vector& gb = tape->film[i];
        Tensor g_z(Wc, H, Wd);
        for (std::size_t k = 0; k < g_z.size(); ++k) g_z[k] = g_a[k] * nn::silu_grad(z[k]);
        Vector g_film(2 * Wc);
        Tensor g_y = g_z;
        auto gzm = g_z.matrix();
        auto ym = y.matrix();
        auto gym = g_y.matrix();
        for (int ch = 0; ch < Wc; ++ch) {
            g_film[ch] = gzm.row(ch).dot(ym.row(ch));
            g_film[Wc + ch] = gzm.row(ch).sum();
            gym.row(ch) *= (1.0 + gb[ch]);
        }
        g_h2 += film_[i].backward(tape->h2, g_film, grads);
        if (i == 0) {
            g_input = conv_in_.backward(g_y, tape->cols[0], H, Wd, grads, true);
        } else {
            Tensor g_prev = blocks_[i - 1].backward(g_y, tape->cols[i], H, Wd, grads, true);
            g_prev += g_a;  // residual path
            g_a = std::move(g_prev);
        }
    }

    Vector g_p2 = g_h2.cwiseProduct(tape->p2.unaryExpr([](double v) { return nn::silu_grad(v); }));
    Vector g_h1 = h_proj_.backward(tape->h1, g_p2, grads);
    Vector g_p1 = g_h1.cwiseProduct(tape->p1.unaryExpr([](double v) { return nn::silu_grad(v); }));
    t_proj_.backward(tape->temb, g_p1, grads);
    Vector g_c = c_proj_.backward(tape->cond, g_p1, grads);

    DenoiserGrads out;
    const int C = cfg_.channels;
    out.d_xt = Tensor(C, H, Wd);
    out.d_known = Tensor(C, H, Wd);
    const std::size_t plane = static_cast<std::size_t>(H) * Wd;
    std::copy(g_input.data(), g_input.data() + C * plane, out.d_xt.data());
    std::copy(g_input.data() + (C + 1) * plane, g_input.data() + (2 * C + 1) * plane, out.d_known.data());
    if (tape->empty) {
        if (grads) {
            auto& gn = grads->of(null_embedding_);
            for (int k = 0; k < cfg_.cond_dim; ++k) gn[k] += g_c[k];
        }
    } else {
        out.d_cond = std::move(g_c);
    }
    return out;
}

void ToyDenoiser::save(const std::filesystem::path& path, const NoiseSchedule& sched,
                       const nlohmann::json& extra) const {
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["config"] = {{"channels", cfg_.channels}, {"width", cfg_.width},         {"dilations", cfg_.dilations},
                      {"cond_dim", cfg_.cond_dim}, {"hidden", cfg_.hidden},       {"time_embed", cfg_.time_embed},
                      {"num_steps", cfg_.num_steps}};
    meta["schedule"] = {{"T", sched.T}, {"beta_min", sched.beta.front()}, {"beta_max", sched.beta.back()}};
    meta["vocabulary"] = vocab_.tokens();
    nn::Param table("vocab.table", {static_cast<int>(vocab_.table().rows()), static_cast<int>(vocab_.table().cols())});
    std::copy(vocab_.table().data(), vocab_.table().data() + vocab_.table().size(), table.value.begin());
    auto ps = params();
    ps.push_back(&table);
    save_checkpoint(path, "toy_denoiser", meta, ps);
}

ToyDenoiser ToyDenoiser::load(const std::filesystem::path& path, NoiseSchedule* sched) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "toy_denoiser") throw IoError("checkpoint is not a toy denoiser: " + path.string());
    const auto& jc = ck.meta.at("config");
    ToyDenoiserConfig cfg;
    cfg.channels = jc.at("channels");
    cfg.width = jc.at("width");
    cfg.dilations = jc.at("dilations").get<std::vector<int>>();
    cfg.cond_dim = jc.at("cond_dim");
    cfg.hidden = jc.at("hidden");
    cfg.time_embed = jc.at("time_embed");
    cfg.num_steps = jc.at("num_steps");
    const auto tokens = ck.meta.at("vocabulary").get<std::vector<std::string>>();
    const auto& tp = ck.tensor("vocab.table");
    RowMatrix table = Eigen::Map<const RowMatrix>(tp.value.data(), tp.shape[0], tp.shape[1]);
    ToyDenoiser model(cfg, Vocabulary(tokens, std::move(table)), 0);
    for (auto* p : model.params()) ck.load_into(*p);
    if (sched) {
        const auto& js = ck.meta.at("schedule");
        *sched = make_schedule(js.at("T"), js.at("beta_min"), js.at("beta_max"));
    }
    return model;
}

}  // namespace diffender
