#include "diffender/errors.hpp"
#include "diffender/eval.hpp"
#include "diffender/png_io.hpp"
#include "diffender/workspace.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

using namespace diffender;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string work_dir;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "experiment config JSON");
    cmd->add_option("--seed", c.seed, "overrides the config seed");
    cmd->add_option("--work-dir", c.work_dir, "checkpoint directory");
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.defense.seed = *c.seed;
    }
    if (!c.work_dir.empty()) cfg.work_dir = c.work_dir;
    return cfg;
}

json run_metadata(const ExperimentConfig& cfg) {
    const std::time_t now = std::time(nullptr);
    char date[32];
    std::strftime(date, sizeof date, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return {{"backend", "toy"}, {"date", date}, {"git_hash", DIFFENDER_GIT_HASH}, {"config", cfg.to_json()}};
}

void write_file(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
    if (!out) throw IoError("cannot write " + p.string());
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::pair<PromptEmbedding, PromptEmbedding> prompts_for(const Workspace& ws, const std::string& dir) {
    if (!dir.empty()) return Workspace::load_prompts(dir);
    return {ws.manual_prompt(PromptRole::Localization), ws.manual_prompt(PromptRole::Restoration)};
}

AttackedSet attack_set_for(const Workspace& ws, const std::string& dir, const std::string& attack, int n) {
    if (!dir.empty() && fs::exists(fs::path(dir) / "manifest.json")) return AttackedSet::load(dir);
    const ExperimentConfig& cfg = ws.config();
    std::cerr << "attacking " << n << " images with " << attack << "\n";
    AttackedSet set =
        make_attack_set(ws.data(), ws.eval_subset(n), ws.classifier(), attack, ws.attack_options(), cfg.seed);
    if (!dir.empty()) set.save(dir);
    return set;
}

int cmd_train(const Common& c, bool force) {
    const ExperimentConfig cfg = resolve(c);
    if (force) {
        fs::remove(Workspace::denoiser_path(cfg));
        fs::remove(Workspace::classifier_path(cfg));
    }
    const Workspace ws = Workspace::open(cfg, true, &std::cerr);
    std::vector<Image> xs;
    std::vector<int> ys;
    for (int id : ws.validation_ids()) {
        xs.push_back(ws.data().images[id]);
        ys.push_back(ws.data().labels[id]);
    }
    const double acc = accuracy(ws.classifier(), xs, ys);
    std::printf("classifier validation accuracy %.2f%% on %zu images\n", 100.0 * acc, xs.size());
    std::printf("checkpoints in %s (config %s)\n", cfg.work_dir.string().c_str(), cfg.hash().c_str());
    return 0;
}

int cmd_attack(const Common& c, const std::string& attack, bool adaptive, const std::string& prompts, int n,
               const std::string& out) {
    const ExperimentConfig cfg = resolve(c);
    const Workspace ws = Workspace::open(cfg, true, &std::cerr);
    if (n <= 0) n = cfg.eval.n_images;
    AttackedSet set;
    if (adaptive) {
        const auto [L, R] = prompts_for(ws, prompts);
        const DiffenderDefense d(ws.denoiser(), ws.schedule(), cfg.defense, L.conditioning(), R.conditioning());
        AttackOptions o = ws.attack_options();
        o.iters = cfg.attack.adaptive_iters;
        set = make_adaptive_attack_set(ws.data(), ws.eval_subset(n), ws.classifier(), d, attack, o, cfg.seed);
    } else {
        set = make_attack_set(ws.data(), ws.eval_subset(n), ws.classifier(), attack, ws.attack_options(), cfg.seed);
    }
    set.save(out);
    int fooled = 0;
    for (std::size_t i = 0; i < set.size(); ++i) fooled += ws.classifier().predict(set.adv[i]) != set.labels[i];
    std::printf("%s: %zu images, %d misclassified undefended\n", set.attack.c_str(), set.size(), fooled);
    return 0;
}

int cmd_defend(const Common& c, const std::string& input, const std::string& out, const std::string& prompts,
               bool no_restore, bool debug) {
    const ExperimentConfig cfg = resolve(c);
    const Workspace ws = Workspace::open(cfg, false);
    const Image x = read_png(input);
    const auto [L, R] = prompts_for(ws, prompts);
    const DiffenderDefense d(ws.denoiser(), ws.schedule(), cfg.defense, L.conditioning(), R.conditioning(),
                             no_restore ? RestoreMode::ZeroFill : RestoreMode::Inpaint);
    const DefenseResult r = d.run(x, RngStream(cfg.seed, 0));
    fs::create_directories(out);
    write_png(fs::path(out) / "restored.png", r.output);
    write_png(fs::path(out) / "mask.png", mask_to_image(r.mask));
    json side = {{"input", input},
                 {"defense", d.name()},
                 {"no_patch", r.no_patch},
                 {"mask_pixels", r.mask.count()},
                 {"t_star", cfg.defense.t_star},
                 {"seed", cfg.seed},
                 {"prompts", prompts.empty() ? "manual" : prompts},
                 {"config_hash", cfg.hash()},
                 {"config", cfg.to_json()}};
    if (debug) {
        const RefineResult rr = refine(r.soft, cfg.defense);
        write_png(fs::path(out) / "soft.png", heatmap(r.soft));
        write_png(fs::path(out) / "refine_initial.png", mask_to_image(rr.initial));
        write_png(fs::path(out) / "refine_smoothed.png", heatmap(rr.smoothed));
        write_png(fs::path(out) / "refine_rebinarized.png", mask_to_image(rr.rebinarized));
        write_png(fs::path(out) / "refine_despeckled.png", mask_to_image(rr.despeckled));
        side["debug"] = {"soft.png", "refine_initial.png", "refine_smoothed.png", "refine_rebinarized.png",
                         "refine_despeckled.png"};
    }
    write_file(fs::path(out) / "defend.json", side.dump(2) + "\n");
    std::printf("%s: %zu masked pixels%s\n", input.c_str(), r.mask.count(), r.no_patch ? " (no patch)" : "");
    return 0;
}

int cmd_tune(const Common& c, const std::string& out) {
    const ExperimentConfig cfg = resolve(c);
    const Workspace ws = Workspace::open(cfg, true, &std::cerr);
    const AttackedSet shots = make_attack_set(ws.data(), ws.few_shot_ids(cfg.tune.shots), ws.classifier(), "AdvP",
                                              ws.attack_options(), cfg.seed);
    const TuneOptions opts = ws.tune_options();
    TuneTrace trace;
    const auto [L, R] = tune_prompts(few_shot_from(shots), ws.manual_prompt(PromptRole::Localization),
                                     ws.manual_prompt(PromptRole::Restoration), opts, ws.denoiser(), ws.schedule(),
                                     cfg.defense, ws.classifier(), PerceptualWeights::all_layers(ws.classifier()),
                                     RngStream(cfg.seed, 0x7e57), &trace);
    fs::create_directories(out);
    const json meta = {{"config_hash", cfg.hash()}, {"shots", cfg.tune.shots}, {"steps", opts.steps}};
    L.save(fs::path(out) / "prompt_L.ckpt", meta);
    R.save(fs::path(out) / "prompt_R.ckpt", meta);

    std::string csv = "step,ce,l1,perc,total\n";
    char buf[160];
    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
        const auto& b = trace.steps[s];
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f\n", s, b.ce, b.l1, b.perc, b.total);
        csv += buf;
    }
    write_file(fs::path(out) / "loss_trace.csv", csv);
    const double first = trace.epoch_mean.empty() ? 0.0 : trace.epoch_mean.front();
    const double last = trace.epoch_mean.empty() ? 0.0 : trace.epoch_mean.back();
    json info = {{"init", L.init_source},
                 {"shot_ids", shots.ids},
                 {"lr", opts.lr},
                 {"weights", {{"ce", opts.weights.ce}, {"l1", opts.weights.l1}, {"perc", opts.weights.perc}}},
                 {"epoch_mean", trace.epoch_mean},
                 {"initial_epoch_mean", first},
                 {"final_epoch_mean", last},
                 {"config_hash", cfg.hash()},
                 {"config", cfg.to_json()}};
    write_file(fs::path(out) / "tune.json", info.dump(2) + "\n");
    std::printf("L_PT epoch mean %.4f -> %.4f over %d steps\n", first, last, opts.steps);
    return 0;
}

std::unique_ptr<Defense> make_defense(const std::string& key, const Workspace& ws, const PromptEmbedding& L,
                                      const PromptEmbedding& R) {
    const ExperimentConfig& cfg = ws.config();
    if (key == "none") return std::make_unique<IdentityDefense>();
    if (key == "diffender")
        return std::make_unique<DiffenderDefense>(ws.denoiser(), ws.schedule(), cfg.defense, L.conditioning(),
                                                  R.conditioning());
    if (key == "nr")
        return std::make_unique<DiffenderDefense>(ws.denoiser(), ws.schedule(), cfg.defense, L.conditioning(),
                                                  R.conditioning(), RestoreMode::ZeroFill, "DIFFender(NR)");
    if (key == "diffpure")
        return std::make_unique<DiffPureDefense>(ws.denoiser(), ws.schedule(), cfg.defense.t_star,
                                                 cfg.defense.inpaint_steps);
    throw ParamError("unknown defense '" + key + "' (none, diffender, nr, diffpure)");
}

int cmd_eval(const Common& c, const std::string& attack_dir, const std::string& attack, const std::string& prompts,
             const std::string& defenses, int triptychs, const std::string& out) {
    const ExperimentConfig cfg = resolve(c);
    const Workspace ws = Workspace::open(cfg, true, &std::cerr);
    const AttackedSet set = attack_set_for(ws, attack_dir, attack, cfg.eval.n_images);
    const auto [L, R] = prompts_for(ws, prompts);
    fs::create_directories(fs::path(out) / "verdicts");

    ResultTable table;
    table.metadata = run_metadata(cfg);
    table.metadata["prompts"] = prompts.empty() ? "manual" : prompts;
    for (const auto& key : split_list(defenses)) {
        const auto d = make_defense(key, ws, L, R);
        std::vector<ImageVerdict> v;
        EvalRecord rec = evaluate(*d, set, ws.classifier(), "toy-cnn", cfg.seed, cfg.hash(), &v);
        write_verdicts(fs::path(out) / "verdicts" / (key + ".csv"), v);
        std::printf("%-16s %-14s clean %.2f%%  robust %.2f%%  (%d images, %.1f s)\n", rec.defense.c_str(),
                    rec.attack.c_str(), rec.clean_acc, rec.robust_acc, rec.n, rec.wall_time);
        if (key == "diffender") {
            for (int i = 0; i < std::min<int>(triptychs, static_cast<int>(set.size())); ++i) {
                const DefenseResult r = d->run(set.adv[i], RngStream(cfg.seed, set.ids[i]).substream(1));
                write_triptych(fs::path(out) / ("triptych_" + std::to_string(set.ids[i]) + ".png"), set.adv[i],
                               r.mask, r.output);
            }
        }
        table.add(std::move(rec));
    }
    emit_outputs(table, out);
    write_file(fs::path(out) / "reference.json", reference_numbers().dump(2) + "\n");
    return 0;
}

int cmd_ablate(const Common& c, const std::string& kind_s, std::string grid, const std::string& attack_dir,
               const std::string& prompts, int n, const std::string& out) {
    const ExperimentConfig cfg = resolve(c);
    const Workspace ws = Workspace::open(cfg, true, &std::cerr);
    const AblationKind kind = parse_ablation_kind(kind_s);
    if (grid.empty()) {
        switch (kind) {
            case AblationKind::Loss: grid = "ce,l1,perc,ce+l1,ce+perc,l1+perc,ce+l1+perc"; break;
            case AblationKind::PatchSize: grid = "0.005,0.01,0.02,0.05,0.1,0.15"; break;
            case AblationKind::NoRestore: grid = "restore,zero-fill"; break;
            case AblationKind::PromptForm: grid = prompts.empty() ? "empty,manual" : "empty,manual,tuned"; break;
        }
    }
    if (n <= 0) n = cfg.eval.n_images;
    AblationContext ctx;
    ctx.model = &ws.denoiser();
    ctx.sched = &ws.schedule();
    ctx.clf = &ws.classifier();
    ctx.data = &ws.data();
    ctx.eval_ids = ws.eval_subset(n);
    if (kind != AblationKind::PatchSize) ctx.attacked = attack_set_for(ws, attack_dir, "AdvP", n);
    if (kind == AblationKind::Loss) {
        ctx.few_shot = few_shot_from(make_attack_set(ws.data(), ws.few_shot_ids(cfg.tune.shots), ws.classifier(),
                                                     "AdvP", ws.attack_options(), cfg.seed));
    }
    ctx.defense = cfg.defense;
    ctx.attack_opts = ws.attack_options();
    ctx.tune = ws.tune_options();
    ctx.perceptual = PerceptualWeights::all_layers(ws.classifier());
    ctx.manual_L = ws.manual_prompt(PromptRole::Localization);
    ctx.manual_R = ws.manual_prompt(PromptRole::Restoration);
    if (!prompts.empty()) std::tie(ctx.tuned_L, ctx.tuned_R) = Workspace::load_prompts(prompts);
    ctx.seed = cfg.seed;
    ctx.config_hash = cfg.hash();

    ResultTable table = run_ablation(kind, split_list(grid), ctx);
    table.metadata = run_metadata(cfg);
    table.metadata["ablation"] = kind_s;
    for (const auto& r : table.records())
        std::printf("%-24s %-12s clean %.2f%%  robust %.2f%%\n", r.defense.c_str(), r.attack.c_str(), r.clean_acc,
                    r.robust_acc);
    emit_outputs(table, out, "ablation_" + kind_s);
    return 0;
}

int cmd_sweep(const Common& c, const std::string& attack_dir, const std::string& grid, const std::string& prompts,
              int n, const std::string& out) {
    const ExperimentConfig cfg = resolve(c);
    const Workspace ws = Workspace::open(cfg, true, &std::cerr);
    AttackedSet set = attack_set_for(ws, attack_dir, "AdvP", n);
    const auto [L, R] = prompts_for(ws, prompts);
    const DiffenderDefense d(ws.denoiser(), ws.schedule(), cfg.defense, L.conditioning(), R.conditioning());
    std::vector<double> g;
    for (const auto& s : split_list(grid)) g.push_back(std::stod(s));
    const TStarReport rep = sweep_tstar(set, g, ws.denoiser(), ws.schedule(), d, R.conditioning(),
                                        cfg.defense.inpaint_steps, cfg.defense.inpaint_steps, cfg.seed);
    fs::create_directories(out);
    json j = rep.to_json();
    j["config_hash"] = cfg.hash();
    write_file(fs::path(out) / "tstar_sweep.json", j.dump(2) + "\n");
    for (const auto& p : rep.points)
        std::printf("t*=%.2f patch %.4f background %.4f L2 %.4f purified %d faithful %d\n", p.t_star, p.mean.patch,
                    p.mean.background, p.mean.global_l2, p.purified, p.faithful);
    std::printf("DIFFender meets both on %.1f%% of images; no grid point meets both: %s\n",
                100.0 * rep.diffender_fraction, rep.no_point_satisfies_both ? "yes" : "no");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Patch localization and diffusion restoration defense, toy scale"};
    app.require_subcommand(1);

    Common c;
    bool force = false;
    auto* train = app.add_subcommand("train-toy", "train (or reuse) the toy denoiser and classifier");
    add_common(train, c);
    train->add_flag("--force", force, "retrain even if checkpoints match");

    std::string attack = "AdvP", prompts, out, input, attack_dir, defenses = "none,diffender,nr", kind, grid;
    bool adaptive = false, no_restore = false, debug = false;
    int n = 0, triptychs = 4;

    auto* atk = app.add_subcommand("attack", "optimize patches on the evaluation subset");
    add_common(atk, c);
    atk->add_option("--attack", attack, "AdvP or LaVAN");
    atk->add_flag("--adaptive", adaptive, "attack through the defense with BPDA");
    atk->add_option("--prompts", prompts, "directory with tuned prompts");
    atk->add_option("-n", n, "number of images");
    atk->add_option("--out", out)->required();

    auto* def = app.add_subcommand("defend", "run the defense on one PNG");
    add_common(def, c);
    def->add_option("--input", input)->required()->check(CLI::ExistingFile);
    def->add_option("--out", out)->required();
    def->add_option("--prompts", prompts);
    def->add_flag("--no-restore", no_restore, "zero-fill instead of inpainting");
    def->add_flag("--debug", debug, "write soft mask and refinement stages");

    auto* tune = app.add_subcommand("tune", "few-shot prompt tuning");
    add_common(tune, c);
    tune->add_option("--out", out)->required();

    auto* ev = app.add_subcommand("eval", "clean and robust accuracy");
    add_common(ev, c);
    ev->add_option("--attack-set", attack_dir, "attacked set directory (created if missing)");
    ev->add_option("--attack", attack, "attack used when the set is generated");
    ev->add_option("--prompts", prompts);
    ev->add_option("--defenses", defenses, "comma list of none, diffender, nr, diffpure");
    ev->add_option("--triptychs", triptychs);
    ev->add_option("--out", out)->required();

    auto* abl = app.add_subcommand("ablate", "ablation study");
    add_common(abl, c);
    abl->add_option("--kind", kind, "loss, patch_size, no_restore or prompt_form")->required();
    abl->add_option("--grid", grid, "comma-separated cells");
    abl->add_option("--attack-set", attack_dir);
    abl->add_option("--prompts", prompts);
    abl->add_option("-n", n);
    abl->add_option("--out", out)->required();

    std::string tgrid = "0.05,0.1,0.15,0.2,0.3,0.4,0.5,0.6,0.8";
    int sweep_n = 16;
    auto* sw = app.add_subcommand("sweep-tstar", "global purification over noise ratios");
    add_common(sw, c);
    sw->add_option("--attack-set", attack_dir);
    sw->add_option("--grid", tgrid);
    sw->add_option("--prompts", prompts);
    sw->add_option("-n", sweep_n);
    sw->add_option("--out", out)->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train) return cmd_train(c, force);
        if (*atk) return cmd_attack(c, attack, adaptive, prompts, n, out);
        if (*def) return cmd_defend(c, input, out, prompts, no_restore, debug);
        if (*tune) return cmd_tune(c, out);
        if (*ev) return cmd_eval(c, attack_dir, attack, prompts, defenses, triptychs, out);
        if (*abl) return cmd_ablate(c, kind, grid, attack_dir, prompts, n, out);
        if (*sw) return cmd_sweep(c, attack_dir, tgrid, prompts, sweep_n, out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
