#pragma once

#include "diffender/classifier.hpp"
#include "diffender/denoiser_training.hpp"
#include "diffender/toy_denoiser.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace diffender {

struct DefenseConfig {
    double t_star = 0.5;
    int m = 3;
    double tau_bin = 0.5;
    /// Threshold applied again after smoothing.
    double tau_smooth = 0.5;
    double sigma_smooth = 0.32;
    int dilate_radius = 1;
    /// Components smaller than this many pixels are dropped.
    int min_area = 1;
    int inpaint_steps = 50;
    std::uint64_t seed = 0;

    /// Size-relative refinement defaults: σ = 1% of the side, radius = 2% of
    /// the side, min_area = 0.05% of the area.
    static DefenseConfig defaults_for(int height, int width);
    /// Throws ParamError on violated invariants.
    void validate() const;
};

struct ScheduleConfig {
    int T = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.01;
};

struct DataConfig {
    int train_count = 2000;
    int val_count = 500;
    int size = 32;
    std::uint64_t seed = 1;
};

struct AttackConfig {
    double area_frac = 0.05;
    int iters = 100;
    double step = 2.0 / 255.0;
    int adaptive_iters = 100;
};

struct TuneConfig {
    int n_ctx = 16;
    int shots = 8;
    int steps = 200;
    double lr = 0.05;
    double w_ce = 1.0;
    double w_l1 = 1.0;
    double w_perc = 1.0;
    /// Inpainting steps used for the forward pass while tuning.
    int inpaint_steps = 10;
    /// "manual" or "random".
    std::string init = "manual";
};

struct EvalConfig {
    int n_images = 128;
    /// Images are drawn from the validation split after a seeded shuffle.
    std::uint64_t subset_seed = 11;
};

/// Fully resolved run configuration. Every CLI verb reads one of these.
struct ExperimentConfig {
    DefenseConfig defense;
    ScheduleConfig schedule;
    DataConfig data;
    ToyDenoiserConfig denoiser;
    DenoiserTrainConfig denoiser_train;
    ClassifierTrainConfig classifier_train;
    AttackConfig attack;
    TuneConfig tune;
    EvalConfig eval;
    std::filesystem::path work_dir = "work";
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys raise ParamError.
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);

    /// FNV-1a over the canonical JSON dump, as 16 hex digits.
    std::string hash() const;
};

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace diffender
