#include "diffender/classifier.hpp"

#include "diffender/errors.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace diffender {

int ClassifierModel::predict(const Image& x) const {
    const Vector z = logits(x);
    Eigen::Index best = 0;
    z.maxCoeff(&best);
    return static_cast<int>(best);
}

double cross_entropy(const Vector& logits, int label, Vector* grad) {
    const double mx = logits.maxCoeff();
    const Vector e = (logits.array() - mx).exp().matrix();
    const double z = e.sum();
    if (grad) {
        *grad = e / z;
        (*grad)[label] -= 1.0;
    }
    return std::log(z) + mx - logits[label];
}

struct ToyClassifier::Tape final : ClassifierTape {
    RowMatrix cols1, cols2, cols3;
    Tensor pre1, pre2, pre3;
    Vector pooled;
    int h = 0, w = 0;
};

ToyClassifier::ToyClassifier(int channels, int num_classes, std::uint64_t seed, std::vector<int> widths)
    : channels_(channels), classes_(num_classes), widths_(std::move(widths)) {
    if (widths_.size() != 3) throw ParamError("toy classifier needs three block widths");
    if (num_classes < 1) throw ParamError("classifier needs at least one class");
    c1_ = nn::Conv2d("c1", channels, widths_[0]);
    c2_ = nn::Conv2d("c2", widths_[0], widths_[1]);
    c3_ = nn::Conv2d("c3", widths_[1], widths_[2]);
    head_ = nn::Linear("head", widths_[2], num_classes);
    RngStream rng(seed, 0xc1a55);
    c1_.init(rng);
    c2_.init(rng);
    c3_.init(rng);
    head_.init(rng);
}

std::vector<nn::Param*> ToyClassifier::params() {
    return {&c1_.weight(), &c1_.bias(), &c2_.weight(), &c2_.bias(),
            &c3_.weight(), &c3_.bias(), &head_.weight(), &head_.bias()};
}

std::vector<const nn::Param*> ToyClassifier::params() const {
    auto ps = const_cast<ToyClassifier*>(this)->params();
    return {ps.begin(), ps.end()};
}

Vector ToyClassifier::logits(const Image& x, std::unique_ptr<ClassifierTape>* tape_out) const {
    if (x.channels() != channels_) throw ShapeError("classifier input channel mismatch");
    if (x.height() % 4 || x.width() % 4) throw ShapeError("classifier input must be divisible by 4");
    auto tape = tape_out ? std::make_unique<Tape>() : nullptr;
    Tensor in = x.tensor();
    for (double& v : in.values()) v -= 0.5;

    Tensor a1 = c1_.forward(in, tape ? &tape->cols1 : nullptr);
    if (tape) tape->pre1 = a1;
    nn::relu_inplace(a1);
    Tensor a2 = c2_.forward(nn::avg_pool2(a1), tape ? &tape->cols2 : nullptr);
    if (tape) tape->pre2 = a2;
    nn::relu_inplace(a2);
    Tensor a3 = c3_.forward(nn::avg_pool2(a2), tape ? &tape->cols3 : nullptr);
    if (tape) tape->pre3 = a3;
    nn::relu_inplace(a3);
    const Vector pooled = nn::global_avg_pool(a3);
    const Vector out = head_.forward(pooled);
    if (tape) {
        tape->h = x.height();
        tape->w = x.width();
        tape->pooled = pooled;
        tape->features["block1"] = std::move(a1);
        tape->features["block2"] = std::move(a2);
        tape->features["block3"] = std::move(a3);
        *tape_out = std::move(tape);
    }
    return out;
}

namespace {

void relu_backward(Tensor& g, const Tensor& pre) {
    for (std::size_t i = 0; i < g.size(); ++i)
        if (pre[i] <= 0.0) g[i] = 0.0;
}

void add_feature_grad(Tensor& g, const std::map<std::string, Tensor>& g_features, const std::string& name) {
    auto it = g_features.find(name);
    if (it != g_features.end()) g += it->second;
}

}  // namespace

Tensor ToyClassifier::backward(const ClassifierTape& base, const Vector& g_logits,
                               const std::map<std::string, Tensor>& g_features, nn::GradMap* grads) const {
    const auto* tape = dynamic_cast<const Tape*>(&base);
    if (!tape) throw ParamError("tape was not produced by this classifier");
    for (const auto& [name, _] : g_features) {
        if (!tape->features.count(name)) throw LayerError("classifier has no feature layer '" + name + "'");
    }
    const int H = tape->h, W = tape->w;
    const Vector g_pooled = head_.backward(tape->pooled, g_logits, grads);
    Tensor g3 = nn::global_avg_pool_backward(g_pooled, widths_[2], H / 4, W / 4);
    add_feature_grad(g3, g_features, "block3");
    relu_backward(g3, tape->pre3);
    Tensor g2 = nn::avg_pool2_backward(c3_.backward(g3, tape->cols3, H / 4, W / 4, grads, true), H / 2, W / 2);
    add_feature_grad(g2, g_features, "block2");
    relu_backward(g2, tape->pre2);
    Tensor g1 = nn::avg_pool2_backward(c2_.backward(g2, tape->cols2, H / 2, W / 2, grads, true), H, W);
    add_feature_grad(g1, g_features, "block1");
    relu_backward(g1, tape->pre1);
    return c1_.backward(g1, tape->cols1, H, W, grads, true);
}

void ToyClassifier::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["channels"] = channels_;
    meta["classes"] = classes_;
    meta["widths"] = widths_;
    save_checkpoint(path, "toy_classifier", meta, params());
}

ToyClassifier ToyClassifier::load(const std::filesystem::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "toy_classifier") throw IoError("checkpoint is not a toy classifier: " + path.string());
    ToyClassifier clf(ck.meta.at("channels"), ck.meta.at("classes"), 0, ck.meta.at("widths").get<std::vector<int>>());
    for (auto* p : clf.params()) ck.load_into(*p);
    return clf;
}

ToyClassifier train_toy_classifier(const ToyDataset& data, const ClassifierTrainConfig& cfg,
                                   std::vector<double>* epoch_loss) {
    if (data.images.empty()) throw DataError("classifier training needs labeled images");
    if (data.labels.size() != data.images.size()) throw DataError("labels do not match images");
    const int classes = std::max<int>(static_cast<int>(data.class_names.size()),
                                      *std::max_element(data.labels.begin(), data.labels.end()) + 1);
    for (const auto& img : data.images)
        if (!img.same_shape(data.images.front())) throw DataError("training images must share one shape");
    for (int l : data.labels)
        if (l < 0) throw DataError("negative label");

    ToyClassifier clf(data.images.front().channels(), classes, cfg.seed);
    nn::Adam opt(clf.params(), {.lr = cfg.lr});
    RngStream rng(cfg.seed, 0x7c1f);
    const int n = static_cast<int>(data.size());
    const int steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const long total = static_cast<long>(steps_per_epoch) * cfg.epochs;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
        double sum = 0.0;
        for (int s = 0; s < steps_per_epoch; ++s, ++step) {
            const double progress = total > 1 ? static_cast<double>(step) / (total - 1) : 0.0;
            opt.set_lr(cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * progress)));
            nn::GradMap grads;
            const int begin = s * cfg.batch, end = std::min(n, begin + cfg.batch);
            for (int k = begin; k < end; ++k) {
                const int idx = order[k];
                std::unique_ptr<ClassifierTape> tape;
                const Vector z = clf.logits(data.images[idx], &tape);
                Vector g;
                sum += cross_entropy(z, data.labels[idx], &g);
                g /= static_cast<double>(end - begin);
                clf.backward(*tape, g, {}, &grads);
            }
            opt.step(grads);
        }
        if (epoch_loss) epoch_loss->push_back(sum / n);
    }
    return clf;
}

double accuracy(const ClassifierModel& clf, const std::vector<Image>& images, const std::vector<int>& labels) {
    if (images.empty()) return 0.0;
    int correct = 0;
    for (std::size_t i = 0; i < images.size(); ++i) correct += clf.predict(images[i]) == labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(images.size());
}

}  // namespace diffender
