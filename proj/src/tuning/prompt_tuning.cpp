#include "diffender/prompt_tuning.hpp"

#include "diffender/checkpoint.hpp"
#include "diffender/errors.hpp"

#include <cmath>

namespace diffender {

namespace {

constexpr double kBceClamp = 1e-7;
// Smooths the channel norm so dead (all-zero) pixels stay differentiable.
constexpr double kNormEps = 1e-6;

}  // namespace

std::string to_string(PromptRole role) {
    return role == PromptRole::Localization ? "localization" : "restoration";
}

void PromptEmbedding::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["n"] = n();
    meta["d_cond"] = dim();
    meta["role"] = to_string(role);
    meta["init"] = init_source;
    nn::Param p("vectors", {n(), dim()});
    std::copy(vectors.data(), vectors.data() + vectors.size(), p.value.begin());
    save_checkpoint(path, "prompt", meta, {&p});
}

PromptEmbedding PromptEmbedding::load(const std::filesystem::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "prompt") throw IoError("checkpoint is not a prompt embedding: " + path.string());
    PromptEmbedding e;
    const int n = ck.meta.at("n"), d = ck.meta.at("d_cond");
    nn::Param p("vectors", {n, d});
    ck.load_into(p);
    e.vectors = Eigen::Map<const RowMatrix>(p.value.data(), n, d);
    e.role = ck.meta.at("role") == "restoration" ? PromptRole::Restoration : PromptRole::Localization;
    e.init_source = ck.meta.value("init", "");
    return e;
}

PromptEmbedding init_prompt(const std::vector<std::string>& tokens, const Vocabulary& vocab, int n, PromptRole role,
                            RngStream& rng) {
    if (n < 1) throw ParamError("prompt needs at least one vector");
    PromptEmbedding e;
    e.role = role;
    e.vectors.resize(n, vocab.dim());
    for (Eigen::Index i = 0; i < e.vectors.size(); ++i) e.vectors.data()[i] = 0.02 * rng.normal();
    const int k = std::min<int>(n, static_cast<int>(tokens.size()));
    for (int i = 0; i < k; ++i) e.vectors.row(i) = vocab.embed(tokens[i]).transpose();
    if (tokens.empty()) {
        e.init_source = "random";
    } else {
        e.init_source = "manual:";
        for (std::size_t i = 0; i < tokens.size(); ++i) e.init_source += (i ? " " : "") + tokens[i];
    }
    return e;
}

PerceptualWeights PerceptualWeights::all_layers(const ClassifierModel& clf) {
    return {clf.feature_layers(), {}};
}

FeatureStack extract_features(const ClassifierModel& clf, const Image& x, const PerceptualWeights& pw) {
    std::unique_ptr<ClassifierTape> tape;
    clf.logits(x, &tape);
    FeatureStack fs;
    fs.layers = pw.layers;
    for (const auto& name : pw.layers) {
        auto it = tape->features.find(name);
        if (it == tape->features.end()) throw LayerError("classifier has no feature layer '" + name + "'");
        auto w = pw.w.find(name);
        fs.weights[name] = w != pw.w.end() ? w->second : Vector::Ones(it->second.channels());
        if (fs.weights[name].size() != it->second.channels()) throw ShapeError("channel weight size mismatch");
        fs.activations[name] = it->second;
    }
    return fs;
}

double loss_ce(const BinaryMask& M, const SoftMask& M_hat, SoftMask* grad) {
    if (M.height() != M_hat.height() || M.width() != M_hat.width()) throw ShapeError("mask shapes differ");
    const double d = static_cast<double>(M.size());
    if (grad) *grad = SoftMask(M.height(), M.width());
    double sum = 0.0;
    for (std::size_t i = 0; i < M.size(); ++i) {
        const double raw = M_hat[i];
        const double p = std::clamp(raw, kBceClamp, 1.0 - kBceClamp);
        sum -= M[i] ? std::log(p) : std::log(1.0 - p);
        if (grad && raw > kBceClamp && raw < 1.0 - kBceClamp) (*grad)[i] = (M[i] ? -1.0 / p : 1.0 / (1.0 - p)) / d;
    }
    return sum / d;
}

double loss_l1(const Image& x_r, const Image& x, Tensor* grad) {
    if (!x_r.same_shape(x)) throw ShapeError("image shapes differ");
    const double n = static_cast<double>(x.size());
    if (grad) *grad = Tensor(x.channels(), x.height(), x.width());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x_r[i] - x[i];
        sum += std::abs(d);
        if (grad) (*grad)[i] = ((d > 0.0) - (d < 0.0)) / n;
    }
    return sum / n;
}

double loss_perceptual(const Image& x_r, const Image& x, const ClassifierModel& clf, const PerceptualWeights& pw,
                       Tensor* grad) {
    if (!x_r.same_shape(x)) throw ShapeError("image shapes differ");
    const FeatureStack ref = extract_features(clf, x, pw);
    std::unique_ptr<ClassifierTape> tape;
    clf.logits(x_r, &tape);

    double total = 0.0;
    std::map<std::string, Tensor> g_features;
    for (const auto& name : pw.layers) {
        auto it = tape->features.find(name);
        if (it == tape->features.end()) throw LayerError("classifier has no feature layer '" + name + "'");
        const Tensor& yr = it->second;
        const Tensor& yc = ref.activations.at(name);
        const Vector& w = ref.weights.at(name);
        const int C = yr.channels();
        const std::size_t P = yr.plane();
        Tensor g(C, yr.height(), yr.width());
        std::vector<double> nr(C), nc(C), dn(C);
        for (std::size_t p = 0; p < P; ++p) {
            double sr = 0.0, sc = 0.0;
            for (int c = 0; c < C; ++c) {
                sr += yr[c * P + p] * yr[c * P + p];
                sc += yc[c * P + p] * yc[c * P + p];
            }
            const double inv_r = 1.0 / std::sqrt(sr + kNormEps * kNormEps);
            const double inv_c = 1.0 / std::sqrt(sc + kNormEps * kNormEps);
            double acc = 0.0, dot = 0.0;
            for (int c = 0; c < C; ++c) {
                nr[c] = yr[c * P + p] * inv_r;
                nc[c] = yc[c * P + p] * inv_c;
                const double diff = w[c] * (nr[c] - nc[c]);
                acc += diff * diff;
                dn[c] = 2.0 * w[c] * diff / static_cast<double>(P);
                dot += dn[c] * nr[c];
            }
            total += acc / static_cast<double>(P);
            // n = y/s  ⇒  dy = (dn − n·(n·dn))/s
            for (int c = 0; c < C; ++c) g[c * P + p] = (dn[c] - nr[c] * dot) * inv_r;
        }
        if (grad) g_features[name] = std::move(g);
    }
    if (grad) *grad = clf.backward(*tape, Vector::Zero(clf.num_classes()), g_features, nullptr);
    return total;
}

LossBreakdown loss_total(const BinaryMask& M, const SoftMask& M_hat, const Image& x_r, const Image& x,
                         const ClassifierModel& clf, const PerceptualWeights& pw, const LossWeights& lw) {
    LossBreakdown b;
    b.ce = loss_ce(M, M_hat);
    b.l1 = loss_l1(x_r, x);
    b.perc = loss_perceptual(x_r, x, clf, pw);
    b.total = lw.ce * b.ce + lw.l1 * b.l1 + lw.perc * b.perc;
    return b;
}

std::pair<PromptEmbedding, PromptEmbedding> tune_prompts(const FewShotSet& set, const PromptEmbedding& init_L,
                                                         const PromptEmbedding& init_R, const TuneOptions& opts,
                                                         const DenoiserModel& model, const NoiseSchedule& sched,
                                                         const DefenseConfig& cfg, const ClassifierModel& clf,
                                                         const PerceptualWeights& pw, const RngStream& rng,
                                                         TuneTrace* trace) {
    if (set.empty()) throw DataError("few-shot set is empty");
    if (opts.steps < 0) throw ParamError("step count must be non-negative");
    if (init_L.dim() != model.cond_dim() || init_R.dim() != model.cond_dim())
        throw ShapeError("prompt dimension does not match the denoiser");
    DefenseConfig c = cfg;
    c.m = opts.m;
    c.inpaint_steps = opts.inpaint_steps;

    PromptEmbedding L = init_L, R = init_R;
    if (trace) *trace = {};
    const int k = static_cast<int>(set.size());
    double epoch_sum = 0.0;
    for (int s = 0; s < opts.steps; ++s) {
        const FewShotSample& shot = set[s % k];
        const DiffenderDefense defense(model, sched, c, L.conditioning(), R.conditioning());
        const DefenseResult res = defense.run(shot.adv, rng.substream(static_cast<std::uint64_t>(s)), true);

        LossBreakdown b;
        SoftMask g_soft;
        Tensor g_l1, g_perc;
        b.ce = loss_ce(shot.mask, res.soft, &g_soft);
        b.l1 = loss_l1(res.output, shot.clean, &g_l1);
        b.perc = loss_perceptual(res.output, shot.clean, clf, pw, &g_perc);
        b.total = opts.weights.ce * b.ce + opts.weights.l1 * b.l1 + opts.weights.perc * b.perc;
        if (!std::isfinite(b.total)) throw DivergenceError("prompt-tuning loss is not finite");

        for (double& v : g_soft.values()) v *= opts.weights.ce;
        g_l1 *= opts.weights.l1;
        g_perc *= opts.weights.perc;
        g_l1 += g_perc;
        const DefenseGrads g = defense.backward(res, g_l1, &g_soft);
        if (!g.d_prompt_L.allFinite() || !g.d_prompt_R.allFinite())
            throw DivergenceError("prompt-tuning gradient is not finite");
        // Sum pooling: every context row receives the pooled gradient.
        L.vectors.rowwise() -= opts.lr * g.d_prompt_L.transpose();
        R.vectors.rowwise() -= opts.lr * g.d_prompt_R.transpose();

        if (trace) {
            trace->steps.push_back(b);
            epoch_sum += b.total;
            if ((s + 1) % k == 0 || s + 1 == opts.steps) {
                const int len = (s % k) + 1;
                trace->epoch_mean.push_back(epoch_sum / len);
                epoch_sum = 0.0;
            }
        }
    }
    return {L, R};
}

}  // namespace diffender
