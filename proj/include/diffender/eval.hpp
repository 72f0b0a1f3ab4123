#pragma once

#include "diffender/attack.hpp"
#include "diffender/classifier.hpp"
#include "diffender/defense.hpp"
#include "diffender/prompt_tuning.hpp"
#include "diffender/toy_data.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace diffender {

struct EvalRecord {
    std::string defense;
    std::string attack;
    std::string classifier;
    double clean_acc = 0.0;   // percent
    double robust_acc = 0.0;  // percent
    int n = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
    double wall_time = 0.0;  // seconds, kept out of the CSV
};

/// Outcome of one image, persisted so every percentage can be recounted.
struct ImageVerdict {
    int image_id = 0;
    int label = 0;
    int clean_pred = 0;
    int robust_pred = 0;
    int mask_pixels = 0;
};

class ResultTable {
public:
    /// Throws ParamError on a duplicate (defense, attack, classifier) key.
    void add(EvalRecord r);
    const std::vector<EvalRecord>& records() const { return records_; }
    bool empty() const { return records_.empty(); }
    nlohmann::json metadata = nlohmann::json::object();

    static std::string csv_header();
    std::string to_csv() const;
    static ResultTable from_csv(const std::string& text);
    nlohmann::json to_json() const;

private:
    std::vector<EvalRecord> records_;
};

/// Seeded shuffle of the dataset, then the first n images the classifier
/// gets right. Throws DataError if fewer than n exist.
std::vector<int> select_eval_subset(const ToyDataset& data, const ClassifierModel& clf, int n, std::uint64_t seed);

/// Clean images with their attacked versions and patch ground truth.
struct AttackedSet {
    std::string attack;
    std::vector<int> ids;
    std::vector<int> labels;
    std::vector<Image> clean;
    std::vector<Image> adv;
    std::vector<PatchSpec> specs;

    std::size_t size() const { return ids.size(); }
    void save(const std::filesystem::path& dir) const;
    static AttackedSet load(const std::filesystem::path& dir);
};

/// "AdvP" starts from random patch content, "LaVAN" from mid-gray; both use
/// the same signed-gradient optimizer. Image i attacks with RngStream(seed, id).
AttackedSet make_attack_set(const ToyDataset& data, const std::vector<int>& ids, const ClassifierModel& clf,
                            const std::string& attack, const AttackOptions& opts, std::uint64_t seed);

/// Adaptive variant: each image is attacked through `defense` with BPDA.
AttackedSet make_adaptive_attack_set(const ToyDataset& data, const std::vector<int>& ids, const ClassifierModel& clf,
                                     const Defense& defense, const std::string& attack, const AttackOptions& opts,
                                     std::uint64_t seed);

/// Defended clean and defended attacked accuracy. Defense randomness for
/// image id comes from RngStream(seed, id), so the result does not depend on order.
EvalRecord evaluate(const Defense& defense, const AttackedSet& set, const ClassifierModel& clf,
                    const std::string& classifier_name, std::uint64_t seed, const std::string& config_hash,
                    std::vector<ImageVerdict>* verdicts = nullptr);

/// Recomputes (clean_acc, robust_acc) in percent from per-image verdicts.
std::pair<double, double> recount(const std::vector<ImageVerdict>& verdicts);

void write_verdicts(const std::filesystem::path& path, const std::vector<ImageVerdict>& v);
std::vector<ImageVerdict> read_verdicts(const std::filesystem::path& path);

/// Everything an ablation needs.
struct AblationContext {
    const DenoiserModel* model = nullptr;
    const NoiseSchedule* sched = nullptr;
    const ClassifierModel* clf = nullptr;
    std::string classifier_name = "toy-cnn";
    const ToyDataset* data = nullptr;
    std::vector<int> eval_ids;
    AttackedSet attacked;    // attack set at the configured patch size
    FewShotSet few_shot;     // for the loss ablation
    DefenseConfig defense;
    AttackOptions attack_opts;
    TuneOptions tune;
    PerceptualWeights perceptual;
    PromptEmbedding manual_L, manual_R;
    PromptEmbedding tuned_L, tuned_R;
    std::uint64_t seed = 0;
    std::string config_hash;
};

enum class AblationKind { Loss, PatchSize, NoRestore, PromptForm };

AblationKind parse_ablation_kind(const std::string& s);

/// One record per grid cell:
///   Loss: cells like "ce+l1+perc", "l1+perc" name the active loss terms;
///   PatchSize: area fractions such as "0.005";
///   NoRestore: "restore" or "zero-fill";
///   PromptForm: "empty", "manual" or "tuned".
ResultTable run_ablation(AblationKind kind, const std::vector<std::string>& grid, const AblationContext& ctx);

/// CSV, JSON and a bar chart PNG of the table. An empty table writes a
/// header-only CSV and no chart. Throws IoError.
void emit_outputs(const ResultTable& table, const std::filesystem::path& dir, const std::string& stem = "results");

/// Adversarial | mask | restored, upscaled.
void write_triptych(const std::filesystem::path& path, const Image& adv, const BinaryMask& mask, const Image& restored);

/// Residuals of one purified image against its clean original.
struct Residuals {
    double patch = 0.0;       // mean |out − clean| over the patch square
    double background = 0.0;  // same, outside the patch
    double global_l2 = 0.0;   // RMS over the whole image
};

Residuals residuals(const Image& out, const Image& clean, const BinaryMask& patch);

struct TStarPoint {
    double t_star = 0.0;
    Residuals mean;
    bool purified = false;  // patch ≤ 1.5·max(background, e_ref)
    bool faithful = false;  // global L2 ≤ the value at t* = 0.15
};

/// Global purification swept over noise ratios, next to the localized defense.
/// e_ref is the restorer's own error when it inpaints the true patch square
/// of the clean image; it floors the background residual, since a
/// regenerated region cannot match the clean pixels exactly.
struct TStarReport {
    std::vector<TStarPoint> points;
    std::vector<double> e_ref;                  // per image
    std::vector<Residuals> diffender;           // per image
    std::vector<std::vector<Residuals>> sweep;  // [point][image]
    std::vector<bool> diffender_ok;             // both conditions per image
    double reference_l2 = 0.0;                  // mean global L2 at t* = 0.15
    double diffender_fraction = 0.0;
    bool no_point_satisfies_both = false;

    nlohmann::json to_json() const;
    /// Recomputes every flag from the stored residuals.
    bool consistent() const;
};

/// Grid must contain 0.15. `max_steps` bounds the reverse chain length.
TStarReport sweep_tstar(const AttackedSet& set, const std::vector<double>& grid, const DenoiserModel& model,
                        const NoiseSchedule& sched, const Defense& defense, const Conditioning& prompt_R,
                        int inpaint_steps, int max_steps, std::uint64_t seed);

/// Reference numbers from the original large-scale evaluation, shipped for context only.
nlohmann::json reference_numbers();

}  // namespace diffender
