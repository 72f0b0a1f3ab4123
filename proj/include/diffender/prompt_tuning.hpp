#pragma once

#include "diffender/classifier.hpp"
#include "diffender/conditioning.hpp"
#include "diffender/config.hpp"
#include "diffender/defense.hpp"
#include "diffender/image.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace diffender {

enum class PromptRole { Localization, Restoration };

std::string to_string(PromptRole role);

/// n learnable context vectors standing in for a text prompt.
struct PromptEmbedding {
    RowMatrix vectors;
    PromptRole role = PromptRole::Localization;
    std::string init_source;

    int n() const { return static_cast<int>(vectors.rows()); }
    int dim() const { return static_cast<int>(vectors.cols()); }
    Conditioning conditioning() const { return Conditioning::from_vectors(vectors); }

    void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
    static PromptEmbedding load(const std::filesystem::path& path);
};

/// Manual: the token embeddings fill the first rows, truncated to n; any
/// remaining rows are N(0, 0.02²). Random (empty token list): every row is N(0, 0.02²).
PromptEmbedding init_prompt(const std::vector<std::string>& tokens, const Vocabulary& vocab, int n, PromptRole role,
                            RngStream& rng);

/// Classifier activations at the perceptual layers, with per-channel weights.
struct FeatureStack {
    std::vector<std::string> layers;
    std::map<std::string, Tensor> activations;
    std::map<std::string, Vector> weights;
};

/// Layers and channel weights for the perceptual distance. A layer without
/// an explicit weight vector uses all ones.
struct PerceptualWeights {
    std::vector<std::string> layers;
    std::map<std::string, Vector> w;

    static PerceptualWeights all_layers(const ClassifierModel& clf);
};

/// Throws LayerError when a configured layer is missing.
FeatureStack extract_features(const ClassifierModel& clf, const Image& x, const PerceptualWeights& pw);

/// Mean per-pixel binary cross-entropy, M̂ clamped to [1e-7, 1 − 1e-7].
double loss_ce(const BinaryMask& M, const SoftMask& M_hat, SoftMask* grad = nullptr);

/// Mean absolute difference over all elements.
double loss_l1(const Image& x_r, const Image& x, Tensor* grad = nullptr);

/// Σ_l 1/(H_l W_l) Σ_hw ‖w_l ⊙ (ŷ_r − ŷ_c)‖² with activations unit-normalized
/// over channels. `grad` receives the gradient w.r.t. x_r.
double loss_perceptual(const Image& x_r, const Image& x, const ClassifierModel& clf, const PerceptualWeights& pw,
                       Tensor* grad = nullptr);

struct LossWeights {
    double ce = 1.0;
    double l1 = 1.0;
    double perc = 1.0;
};

struct LossBreakdown {
    double ce = 0.0;
    double l1 = 0.0;
    double perc = 0.0;
    double total = 0.0;
};

LossBreakdown loss_total(const BinaryMask& M, const SoftMask& M_hat, const Image& x_r, const Image& x,
                         const ClassifierModel& clf, const PerceptualWeights& pw, const LossWeights& lw = {});

struct FewShotSample {
    Image clean;
    Image adv;
    BinaryMask mask;
    int label = 0;
};
using FewShotSet = std::vector<FewShotSample>;

struct TuneOptions {
    int steps = 200;
    double lr = 0.05;
    LossWeights weights;
    /// Difference repetitions while tuning.
    int m = 1;
    int inpaint_steps = 10;
};

struct TuneTrace {
    /// L_PT of every optimizer step (one shot per step).
    std::vector<LossBreakdown> steps;
    /// Mean L_PT over each pass through the shots.
    std::vector<double> epoch_mean;
};

/// Gradient descent on both prompts. Each step processes one shot, cycling
/// through the set; binarization and refinement pass gradients straight
/// through. Throws DivergenceError on a non-finite loss, DataError on an empty set.
std::pair<PromptEmbedding, PromptEmbedding> tune_prompts(const FewShotSet& set, const PromptEmbedding& init_L,
                                                         const PromptEmbedding& init_R, const TuneOptions& opts,
                                                         const DenoiserModel& model, const NoiseSchedule& sched,
                                                         const DefenseConfig& cfg, const ClassifierModel& clf,
                                                         const PerceptualWeights& pw, const RngStream& rng,
                                                         TuneTrace* trace = nullptr);

}  // namespace diffender
