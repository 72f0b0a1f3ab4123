#include "diffender/workspace.hpp"

#include "diffender/checkpoint.hpp"
#include "diffender/denoiser_training.hpp"
#include "diffender/errors.hpp"

#include <chrono>
#include <cstdio>

namespace diffender {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex_hash(const json& j) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

std::string stored_hash(const fs::path& path) {
    if (!fs::exists(path)) return {};
    try {
        return load_checkpoint(path).meta.value("train_hash", "");
    } catch (const Error&) {
        return {};
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ToyDataset training_split(const ToyDataset& all, int train_count) {
    if (train_count < 1 || train_count > static_cast<int>(all.size())) throw DataError("bad training split size");
    ToyDataset t;
    t.class_names = all.class_names;
    t.images.assign(all.images.begin(), all.images.begin() + train_count);
    t.labels.assign(all.labels.begin(), all.labels.begin() + train_count);
    return t;
}

fs::path Workspace::denoiser_path(const ExperimentConfig& cfg) { return cfg.work_dir / "denoiser.ckpt"; }
fs::path Workspace::classifier_path(const ExperimentConfig& cfg) { return cfg.work_dir / "classifier.ckpt"; }

std::string Workspace::denoiser_hash(const ExperimentConfig& cfg) {
    const json j = cfg.to_json();
    return hex_hash({j["data"], j["schedule"], j["denoiser"], j["denoiser_train"]});
}

std::string Workspace::classifier_hash(const ExperimentConfig& cfg) {
    const json j = cfg.to_json();
    return hex_hash({j["data"], j["classifier_train"]});
}

Workspace Workspace::open(const ExperimentConfig& cfg, bool train_missing, std::ostream* log) {
    Workspace ws;
    ws.cfg_ = cfg;
    ws.sched_ = make_schedule(cfg.schedule.T, cfg.schedule.beta_min, cfg.schedule.beta_max);
    ws.data_ = make_toy_dataset(cfg.data.train_count + cfg.data.val_count, cfg.data.seed, cfg.data.size);
    std::error_code ec;
    fs::create_directories(cfg.work_dir, ec);

    const fs::path cpath = classifier_path(cfg);
    const std::string chash = classifier_hash(cfg);
    if (stored_hash(cpath) == chash) {
        ws.classifier_ = std::make_shared<ToyClassifier>(ToyClassifier::load(cpath));
    } else {
        if (!train_missing) throw IoError("no classifier checkpoint for this config at " + cpath.string());
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<double> losses;
        ws.classifier_ = std::make_shared<ToyClassifier>(
            train_toy_classifier(training_split(ws.data_, cfg.data.train_count), cfg.classifier_train, &losses));
        ws.classifier_->save(cpath, {{"train_hash", chash}, {"epoch_loss", losses}});
        if (log) *log << "trained classifier in " << seconds_since(t0) << " s\n";
    }

    const fs::path dpath = denoiser_path(cfg);
    const std::string dhash = denoiser_hash(cfg);
    if (stored_hash(dpath) == dhash) {
        NoiseSchedule stored;
        ws.denoiser_ = std::make_shared<ToyDenoiser>(ToyDenoiser::load(dpath, &stored));
    } else {
        if (!train_missing) throw IoError("no denoiser checkpoint for this config at " + dpath.string());
        const auto t0 = std::chrono::steady_clock::now();
        TrainReport report;
        ws.denoiser_ = std::make_shared<ToyDenoiser>(train_toy_denoiser(
            training_split(ws.data_, cfg.data.train_count), ws.sched_, cfg.denoiser, cfg.denoiser_train, &report,
            [&](int epoch, double loss) {
                if (log) *log << "denoiser epoch " << epoch << " loss " << loss << " (" << seconds_since(t0) << " s)\n";
            }));
        ws.denoiser_->save(dpath, ws.sched_, {{"train_hash", dhash}, {"epoch_loss", report.epoch_loss}});
    }
    return ws;
}

std::vector<int> Workspace::validation_ids() const {
    std::vector<int> ids;
    for (int i = cfg_.data.train_count; i < static_cast<int>(data_.size()); ++i) ids.push_back(i);
    return ids;
}

namespace {

std::vector<int> subset_of(const ToyDataset& all, int begin, int end, const ClassifierModel& clf, int n,
                           std::uint64_t seed) {
    ToyDataset part;
    part.class_names = all.class_names;
    part.images.assign(all.images.begin() + begin, all.images.begin() + end);
    part.labels.assign(all.labels.begin() + begin, all.labels.begin() + end);
    std::vector<int> ids = select_eval_subset(part, clf, n, seed);
    for (int& i : ids) i += begin;
    return ids;
}

}  // namespace

std::vector<int> Workspace::eval_subset(int n) const {
    return subset_of(data_, cfg_.data.train_count, static_cast<int>(data_.size()), *classifier_, n,
                     cfg_.eval.subset_seed);
}

std::vector<int> Workspace::few_shot_ids(int k) const {
    return subset_of(data_, 0, cfg_.data.train_count, *classifier_, k, cfg_.eval.subset_seed + 1);
}

AttackOptions Workspace::attack_options() const {
    AttackOptions o;
    o.area_frac = cfg_.attack.area_frac;
    o.iters = cfg_.attack.iters;
    o.step = cfg_.attack.step;
    return o;
}

TuneOptions Workspace::tune_options() const {
    TuneOptions o;
    o.steps = cfg_.tune.steps;
    o.lr = cfg_.tune.lr;
    o.weights = {cfg_.tune.w_ce, cfg_.tune.w_l1, cfg_.tune.w_perc};
    o.inpaint_steps = cfg_.tune.inpaint_steps;
    return o;
}

FewShotSet few_shot_from(const AttackedSet& set) {
    FewShotSet out;
    for (std::size_t i = 0; i < set.size(); ++i)
        out.push_back({set.clean[i], set.adv[i], set.specs[i].mask(), set.labels[i]});
    return out;
}

PromptEmbedding Workspace::manual_prompt(PromptRole role) const {
    const bool loc = role == PromptRole::Localization;
    RngStream rng(cfg_.seed, loc ? 0x9a11 : 0x9a12);
    if (cfg_.tune.init == "random") return init_prompt({}, denoiser_->vocabulary(), cfg_.tune.n_ctx, role, rng);
    return init_prompt({loc ? "adversarial" : "clean"}, denoiser_->vocabulary(), cfg_.tune.n_ctx, role, rng);
}

std::pair<PromptEmbedding, PromptEmbedding> Workspace::load_prompts(const fs::path& dir) {
    return {PromptEmbedding::load(dir / "prompt_L.ckpt"), PromptEmbedding::load(dir / "prompt_R.ckpt")};
}

}  // namespace diffender
