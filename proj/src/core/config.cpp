#include "diffender/config.hpp"

#include "diffender/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace diffender {

using nlohmann::json;

DefenseConfig DefenseConfig::defaults_for(int height, int width) {
    DefenseConfig c;
    const double side = std::max(height, width);
    c.sigma_smooth = 0.01 * side;
    c.dilate_radius = static_cast<int>(std::lround(0.02 * side));
    c.min_area = std::max(1, static_cast<int>(std::ceil(0.0005 * height * width)));
    return c;
}

void DefenseConfig::validate() const {
    if (!(t_star >= 0.0 && t_star <= 1.0)) throw ParamError("t_star must lie in [0,1]");
    if (m < 1) throw ParamError("m must be at least 1");
    if (!(tau_bin > 0.0 && tau_bin < 1.0)) throw ParamError("tau_bin must lie in (0,1)");
    if (!(tau_smooth > 0.0 && tau_smooth < 1.0)) throw ParamError("tau_smooth must lie in (0,1)");
    if (!(sigma_smooth >= 0.0)) throw ParamError("sigma_smooth must be non-negative");
    if (dilate_radius < 0) throw ParamError("dilate_radius must be non-negative");
    if (min_area < 0) throw ParamError("min_area must be non-negative");
    if (inpaint_steps < 1) throw ParamError("inpaint_steps must be positive");
}

namespace {

/// Reads keys present in `j` into fields; rejects keys nobody claimed.
class Reader {
public:
    Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j_.is_object()) throw ParamError("config section '" + section_ + "' must be an object");
    }
    ~Reader() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (const auto& [k, _] : j_.items())
            if (!seen_.count(k)) throw ParamError("unknown config key '" + section_ + "." + k + "'");
    }

    template <class T>
    Reader& operator()(const char* key, T& field) {
        seen_.insert(key);
        if (auto it = j_.find(key); it != j_.end()) {
            try {
                field = it->get<T>();
            } catch (const json::exception& e) {
                throw ParamError("bad value for '" + section_ + "." + key + "': " + e.what());
            }
        }
        return *this;
    }

    const json* section(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

private:
    const json& j_;
    std::string section_;
    std::set<std::string> seen_;
};

}  // namespace

json ExperimentConfig::to_json() const {
    const auto& d = defense;
    const auto& dt = denoiser_train;
    return {
        {"seed", seed},
        {"work_dir", work_dir.string()},
        {"defense",
         {{"t_star", d.t_star}, {"m", d.m}, {"tau_bin", d.tau_bin}, {"tau_smooth", d.tau_smooth},
          {"sigma_smooth", d.sigma_smooth}, {"dilate_radius", d.dilate_radius}, {"min_area", d.min_area},
          {"inpaint_steps", d.inpaint_steps}, {"seed", d.seed}}},
        {"schedule", {{"T", schedule.T}, {"beta_min", schedule.beta_min}, {"beta_max", schedule.beta_max}}},
        {"data",
         {{"train_count", data.train_count}, {"val_count", data.val_count}, {"size", data.size}, {"seed", data.seed}}},
        {"denoiser",
         {{"width", denoiser.width}, {"dilations", denoiser.dilations}, {"cond_dim", denoiser.cond_dim},
          {"hidden", denoiser.hidden}, {"time_embed", denoiser.time_embed}}},
        {"denoiser_train",
         {{"epochs", dt.epochs}, {"batch", dt.batch}, {"lr", dt.lr}, {"lr_final", dt.lr_final},
          {"grad_clip", dt.grad_clip}, {"p_sticker", dt.p_sticker}, {"sticker_min", dt.sticker_min},
          {"sticker_max", dt.sticker_max}, {"p_inpaint", dt.p_inpaint}, {"inpaint_min_frac", dt.inpaint_min_frac},
          {"inpaint_max_frac", dt.inpaint_max_frac}, {"p_null", dt.p_null}, {"p_token_drop", dt.p_token_drop},
          {"cond_noise", dt.cond_noise}, {"seed", dt.seed}}},
        {"classifier_train",
         {{"epochs", classifier_train.epochs}, {"batch", classifier_train.batch}, {"lr", classifier_train.lr},
          {"lr_final", classifier_train.lr_final}, {"seed", classifier_train.seed}}},
        {"attack",
         {{"area_frac", attack.area_frac}, {"iters", attack.iters}, {"step", attack.step},
          {"adaptive_iters", attack.adaptive_iters}}},
        {"tune",
         {{"n_ctx", tune.n_ctx}, {"shots", tune.shots}, {"steps", tune.steps}, {"lr", tune.lr}, {"w_ce", tune.w_ce},
          {"w_l1", tune.w_l1}, {"w_perc", tune.w_perc}, {"inpaint_steps", tune.inpaint_steps}, {"init", tune.init}}},
        {"eval", {{"n_images", eval.n_images}, {"subset_seed", eval.subset_seed}}},
    };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    std::string work = c.work_dir.string();
    Reader top(j, "config");
    top("seed", c.seed)("work_dir", work);
    c.work_dir = work;
    if (const json* s = top.section("defense")) {
        auto& d = c.defense;
        Reader(*s, "defense")("t_star", d.t_star)("m", d.m)("tau_bin", d.tau_bin)("tau_smooth", d.tau_smooth)(
            "sigma_smooth", d.sigma_smooth)("dilate_radius", d.dilate_radius)("min_area", d.min_area)(
            "inpaint_steps", d.inpaint_steps)("seed", d.seed);
    }
    if (const json* s = top.section("schedule"))
        Reader(*s, "schedule")("T", c.schedule.T)("beta_min", c.schedule.beta_min)("beta_max", c.schedule.beta_max);
    if (const json* s = top.section("data"))
        Reader(*s, "data")("train_count", c.data.train_count)("val_count", c.data.val_count)("size", c.data.size)(
            "seed", c.data.seed);
    if (const json* s = top.section("denoiser")) {
        auto& d = c.denoiser;
        Reader(*s, "denoiser")("width", d.width)("dilations", d.dilations)("cond_dim", d.cond_dim)("hidden", d.hidden)(
            "time_embed", d.time_embed);
    }
    if (const json* s = top.section("denoiser_train")) {
        auto& d = c.denoiser_train;
        Reader(*s, "denoiser_train")("epochs", d.epochs)("batch", d.batch)("lr", d.lr)("lr_final", d.lr_final)(
            "grad_clip", d.grad_clip)("p_sticker", d.p_sticker)("sticker_min", d.sticker_min)(
            "sticker_max", d.sticker_max)("p_inpaint", d.p_inpaint)("inpaint_min_frac", d.inpaint_min_frac)(
            "inpaint_max_frac", d.inpaint_max_frac)("p_null", d.p_null)("p_token_drop", d.p_token_drop)(
            "cond_noise", d.cond_noise)("seed", d.seed);
    }
    if (const json* s = top.section("classifier_train")) {
        auto& d = c.classifier_train;
        Reader(*s, "classifier_train")("epochs", d.epochs)("batch", d.batch)("lr", d.lr)("lr_final", d.lr_final)(
            "seed", d.seed);
    }
    if (const json* s = top.section("attack"))
        Reader(*s, "attack")("area_frac", c.attack.area_frac)("iters", c.attack.iters)("step", c.attack.step)(
            "adaptive_iters", c.attack.adaptive_iters);
    if (const json* s = top.section("tune")) {
        auto& t = c.tune;
        Reader(*s, "tune")("n_ctx", t.n_ctx)("shots", t.shots)("steps", t.steps)("lr", t.lr)("w_ce", t.w_ce)(
            "w_l1", t.w_l1)("w_perc", t.w_perc)("inpaint_steps", t.inpaint_steps)("init", t.init);
    }
    if (const json* s = top.section("eval"))
        Reader(*s, "eval")("n_images", c.eval.n_images)("subset_seed", c.eval.subset_seed);
    c.defense.validate();
    if (c.tune.init != "manual" && c.tune.init != "random") throw ParamError("tune.init must be manual or random");
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ParamError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string ExperimentConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
    return buf;
}

}  // namespace diffender
