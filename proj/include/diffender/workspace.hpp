#pragma once

#include "diffender/classifier.hpp"
#include "diffender/config.hpp"
#include "diffender/defense.hpp"
#include "diffender/eval.hpp"
#include "diffender/prompt_tuning.hpp"
#include "diffender/toy_data.hpp"
#include "diffender/toy_denoiser.hpp"

#include <filesystem>
#include <memory>
#include <ostream>
#include <vector>

namespace diffender {

/// Toy models plus the data they were trained on, under cfg.work_dir.
/// Checkpoints remember a hash of the settings that produced them and are
/// retrained when those settings change.
class Workspace {
public:
    /// With train_missing, absent or stale checkpoints are trained; otherwise
    /// they raise IoError. Progress goes to `log` when given.
    static Workspace open(const ExperimentConfig& cfg, bool train_missing, std::ostream* log = nullptr);

    const ExperimentConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return sched_; }
    const ToyDataset& data() const { return data_; }
    const ToyDenoiser& denoiser() const { return *denoiser_; }
    const ToyClassifier& classifier() const { return *classifier_; }

    int train_count() const { return cfg_.data.train_count; }
    std::vector<int> validation_ids() const;
    /// Evaluation images: correctly classified validation images after a
    /// seeded shuffle. Ids index data().
    std::vector<int> eval_subset(int n) const;
    /// Few-shot tuning images, drawn the same way from the training split.
    std::vector<int> few_shot_ids(int k) const;
    AttackOptions attack_options() const;
    TuneOptions tune_options() const;

    PromptEmbedding manual_prompt(PromptRole role) const;
    /// Tuned prompts from dir (prompt_L.ckpt / prompt_R.ckpt).
    static std::pair<PromptEmbedding, PromptEmbedding> load_prompts(const std::filesystem::path& dir);

    static std::filesystem::path denoiser_path(const ExperimentConfig& cfg);
    static std::filesystem::path classifier_path(const ExperimentConfig& cfg);
    static std::string denoiser_hash(const ExperimentConfig& cfg);
    static std::string classifier_hash(const ExperimentConfig& cfg);

private:
    ExperimentConfig cfg_;
    NoiseSchedule sched_;
    ToyDataset data_;
    std::shared_ptr<ToyDenoiser> denoiser_;
    std::shared_ptr<ToyClassifier> classifier_;
};

FewShotSet few_shot_from(const AttackedSet& set);

/// First train_count images of the configured dataset.
ToyDataset training_split(const ToyDataset& all, int train_count);

}  // namespace diffender
