// End-to-end acceptance run on the toy setup. Prints one PASS/FAIL line per
// criterion and exits nonzero if any fails. Trains the toy models into the
// work directory on first use.

#include "diffender/diffusion.hpp"
#include "diffender/errors.hpp"
#include "diffender/eval.hpp"
#include "diffender/localization.hpp"
#include "diffender/mask_refine.hpp"
#include "diffender/restoration.hpp"
#include "diffender/workspace.hpp"
#include "helpers.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

using namespace diffender;
using namespace testing_support;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), dt);
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

bool subset(const BinaryMask& a, const BinaryMask& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] && !b[i]) return false;
    return true;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// |analytic − numeric| ≤ rtol · max(|numeric|, floor) everywhere.
template <class A, class B>
bool grads_match(const A& a, const B& num, double rtol, double floor, double* worst) {
    *worst = max_rel_err(a, num, floor);
    return *worst <= rtol;
}

Outcome inversion(const NoiseSchedule& s) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        RngStream rng(0xacc1, trial);
        const Image x = random_image(32, 32, 3, 7000 + trial);
        const int t = rng.uniform_int(0, s.T - 1);
        Tensor eps;
        const Tensor xt = forward_noise(x, t, s, rng, &eps);
        const FixedEpsDenoiser oracle(eps);
        const Image x0 = predict_x0_one_step(xt, t, Conditioning::empty(4), oracle, s);
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x0[i] - x[i]));
    }
    return {worst <= 1e-5, fmt("max |x0_hat - x0| = %.3g over 100 trials (limit 1e-5)", worst)};
}

Outcome noising_variance(const NoiseSchedule& s) {
    const int t = ratio_to_step(0.5, s);
    const Image x = random_image(1, 1, 1, 0xacc2);
    RngStream rng(0xacc2);
    const int n = 10000;
    double sum = 0.0, sq = 0.0;
    for (int k = 0; k < n; ++k) {
        const double v = forward_noise(x, t, s, rng)[0];
        sum += v;
        sq += v * v;
    }
    const double var = sq / n - (sum / n) * (sum / n);
    const double expected = 1.0 - s.alpha_bar[t];
    const double rel = std::abs(var / expected - 1.0);
    return {rel <= 0.05, fmt("variance %.5f vs 1 - alpha_bar %.5f at t=%d, rel. error %.2f%% (limit 5%%)", var,
                             expected, t, 100.0 * rel)};
}

Outcome gradient_suite() {
    const double rtol = 1e-3, floor = 1e-2;
    RngStream r(0xacc3);
    bool ok = true;
    std::string detail;

    const BinaryMask m = random_mask(8, 8, r, 0.5);
    SoftMask p(8, 8);
    for (auto& v : p.values()) v = r.uniform(0.05, 0.95);
    SoftMask gce;
    loss_ce(m, p, &gce);
    double e;
    ok &= grads_match(gce.values(), numeric_grad(p.values(), [&] { return loss_ce(m, p); }), rtol, floor, &e);
    detail += fmt("ce %.1e", e);

    Image a = random_image(8, 8, 3, 0xacc4);
    const Image b = random_image(8, 8, 3, 0xacc5);
    Tensor gl1;
    loss_l1(a, b, &gl1);
    ok &= grads_match(gl1.values(), numeric_grad(a.tensor().values(), [&] { return loss_l1(a, b); }), rtol, floor,
                      &e);
    detail += fmt(", l1 %.1e", e);

    const ToyClassifier clf(3, 4, 0xacc6, {4, 6, 8});
    const PerceptualWeights pw = PerceptualWeights::all_layers(clf);
    Tensor gp;
    loss_perceptual(a, b, clf, pw, &gp);
    ok &= grads_match(gp.values(), numeric_grad(a.tensor().values(), [&] { return loss_perceptual(a, b, clf, pw); }),
                      rtol, floor, &e);
    detail += fmt(", perceptual %.1e", e);

    int ste_bad = 0;
    for (int k = 0; k < 200; ++k) {
        const SoftMask s(1, 1, r.uniform());
        const SoftMask g(1, 1, r.uniform(-5.0, 5.0));
        if (binarize_backward(s, g)[0] != g[0]) ++ste_bad;
    }
    ok &= ste_bad == 0;
    detail += fmt(" (max rel. error, limit %.0e); STE identity on %d/200 scalar probes", rtol, 200 - ste_bad);
    return {ok, detail};
}

Outcome morphology_suite() {
    RngStream r(0xacc7);
    const int cases = 1000;
    int bad = 0;
    for (int trial = 0; trial < cases; ++trial) {
        const int h = r.uniform_int(1, 24), w = r.uniform_int(1, 24);
        const BinaryMask a = random_mask(h, w, r, r.uniform(0.0, 0.4));
        BinaryMask bigger = a;
        for (std::size_t i = 0; i < bigger.size(); ++i)
            if (r.bernoulli(0.1)) bigger[i] = 1;
        const int rad = r.uniform_int(0, 3);
        const BinaryMask da = dilate(a, rad);
        bool ok = subset(a, da) && subset(da, dilate(bigger, rad)) && subset(da, dilate(a, rad + 1));

        const SoftMask s = random_soft(h, w, r);
        double t1 = r.uniform(0.01, 0.99), t2 = r.uniform(0.01, 0.99);
        if (t1 > t2) std::swap(t1, t2);
        ok &= subset(binarize(s, t2), binarize(s, t1));

        const int area = r.uniform_int(0, 8);
        const BinaryMask once = remove_small_components(a, area);
        ok &= subset(once, a) && remove_small_components(once, area) == once;

        DefenseConfig cfg;
        cfg.tau_bin = r.uniform(0.1, 0.9);
        cfg.tau_smooth = r.uniform(0.1, 0.9);
        cfg.sigma_smooth = r.uniform(0.0, 1.5);
        cfg.dilate_radius = r.uniform_int(0, 2);
        cfg.min_area = r.uniform_int(0, 6);
        const RefineResult x = refine(s, cfg), y = refine(s, cfg);
        ok &= x.mask == y.mask && x.no_patch == y.no_patch && x.no_patch == !x.mask.any();
        bad += !ok;
    }
    return {bad == 0, fmt("%d/%d random cases hold every property", cases - bad, cases)};
}

Outcome compositing(const Workspace& ws) {
    const ExperimentConfig& cfg = ws.config();
    const auto ids = ws.validation_ids();
    const Conditioning empty = Conditioning::empty(ws.denoiser().cond_dim());
    const Conditioning clean = ws.manual_prompt(PromptRole::Restoration).conditioning();
    int bad = 0, pixels = 0;
    const int cases = 200;
    for (int k = 0; k < cases; ++k) {
        RngStream r(0xacc8, k);
        const Image& x = ws.data().images[ids[k % ids.size()]];
        const BinaryMask mask = random_mask(x.height(), x.width(), r, r.uniform(0.0, 0.5));
        const Conditioning& c = k % 2 ? clean : empty;
        RngStream rr = r.substream(1), ri = r.substream(2);
        const Image out = restore(x, mask, c, ws.denoiser(), ws.schedule(), cfg.defense, rr);
        const Image inp = inpaint(x, mask, c, ws.denoiser(), ws.schedule(), cfg.defense.inpaint_steps, ri);
        bool ok = true;
        for (int ch = 0; ch < x.channels(); ++ch)
            for (int yy = 0; yy < x.height(); ++yy)
                for (int xx = 0; xx < x.width(); ++xx)
                    if (!mask(yy, xx)) {
                        ok &= out(ch, yy, xx) == x(ch, yy, xx) && inp(ch, yy, xx) == x(ch, yy, xx);
                        ++pixels;
                    }
        bad += !ok;
    }
    return {bad == 0, fmt("%d/%d masks leave all %d unmasked pixel values bit-identical", cases - bad, cases, pixels)};
}

Outcome aap_localization(const Workspace& ws, const AttackedSet& set, const PromptEmbedding& L,
                         const PromptEmbedding& R, int n, json* out) {
    const ExperimentConfig& cfg = ws.config();
    const DiffenderDefense d(ws.denoiser(), ws.schedule(), cfg.defense, L.conditioning(), R.conditioning());
    double in_sum = 0.0, out_sum = 0.0, iou = 0.0;
    for (int i = 0; i < n; ++i) {
        const DefenseResult r = d.run(set.adv[i], RngStream(cfg.seed, set.ids[i]).substream(1));
        const BinaryMask gt = set.specs[i].mask();
        double si = 0.0, so = 0.0;
        int ni = 0, no = 0;
        for (std::size_t p = 0; p < gt.size(); ++p) {
            if (gt[p]) {
                si += r.soft[p];
                ++ni;
            } else {
                so += r.soft[p];
                ++no;
            }
        }
        in_sum += si / ni;
        out_sum += so / no;
        iou += mask_iou(r.mask, gt);
    }
    const double ratio = out_sum > 0.0 ? in_sum / out_sum : 0.0;
    iou /= n;
    (*out)["aap"] = {{"images", n}, {"inside_mean", in_sum / n}, {"outside_mean", out_sum / n},
                     {"ratio", ratio}, {"mean_iou", iou}};
    return {ratio >= 2.0 && iou >= 0.5,
            fmt("inside/outside soft-mask ratio %.2f (limit 2), mean IoU %.3f (limit 0.5) over %d images", ratio, iou,
                n)};
}

Outcome efficacy(const Workspace& ws, const AttackedSet& set, const PromptEmbedding& L, const PromptEmbedding& R,
                 json* out) {
    const ExperimentConfig& cfg = ws.config();
    const DiffenderDefense full(ws.denoiser(), ws.schedule(), cfg.defense, L.conditioning(), R.conditioning());
    const DiffenderDefense nr(ws.denoiser(), ws.schedule(), cfg.defense, L.conditioning(), R.conditioning(),
                              RestoreMode::ZeroFill, "DIFFender(NR)");
    const IdentityDefense none;
    const EvalRecord a = evaluate(full, set, ws.classifier(), "toy-cnn", cfg.seed, cfg.hash());
    const EvalRecord b = evaluate(nr, set, ws.classifier(), "toy-cnn", cfg.seed, cfg.hash());
    const EvalRecord c = evaluate(none, set, ws.classifier(), "toy-cnn", cfg.seed, cfg.hash());
    (*out)["efficacy"] = {{"images", set.size()},
                          {"diffender", {{"clean", a.clean_acc}, {"robust", a.robust_acc}}},
                          {"no_restore", {{"clean", b.clean_acc}, {"robust", b.robust_acc}}},
                          {"undefended", {{"clean", c.clean_acc}, {"robust", c.robust_acc}}}};
    const bool ok = a.robust_acc - b.robust_acc >= 5.0 && b.robust_acc - c.robust_acc >= 5.0;
    return {ok, fmt("robust accuracy DIFFender %.2f%% > zero-fill %.2f%% > undefended %.2f%% (gaps %.2f, %.2f pp; "
                    "limit 5) over %zu images",
                    a.robust_acc, b.robust_acc, c.robust_acc, a.robust_acc - b.robust_acc,
                    b.robust_acc - c.robust_acc, set.size())};
}

Outcome tuning_effect(const Workspace& ws, const AttackedSet& set, const fs::path& dir, json* out) {
    const ExperimentConfig& cfg = ws.config();
    const AttackedSet shots = make_attack_set(ws.data(), ws.few_shot_ids(cfg.tune.shots), ws.classifier(), "AdvP",
                                              ws.attack_options(), cfg.seed);
    TuneTrace trace;
    const auto [L, R] = tune_prompts(few_shot_from(shots), ws.manual_prompt(PromptRole::Localization),
                                     ws.manual_prompt(PromptRole::Restoration), ws.tune_options(), ws.denoiser(),
                                     ws.schedule(), cfg.defense, ws.classifier(),
                                     PerceptualWeights::all_layers(ws.classifier()), RngStream(cfg.seed, 0x7e57),
                                     &trace);
    L.save(dir / "prompt_L.ckpt");
    R.save(dir / "prompt_R.ckpt");
    const double first = trace.epoch_mean.front(), last = trace.epoch_mean.back();

    const Conditioning empty = Conditioning::empty(ws.denoiser().cond_dim());
    const DiffenderDefense tuned(ws.denoiser(), ws.schedule(), cfg.defense, L.conditioning(), R.conditioning());
    const DiffenderDefense blank(ws.denoiser(), ws.schedule(), cfg.defense, empty, empty);
    const EvalRecord t = evaluate(tuned, set, ws.classifier(), "toy-cnn", cfg.seed, cfg.hash());
    const EvalRecord e = evaluate(blank, set, ws.classifier(), "toy-cnn", cfg.seed, cfg.hash());
    (*out)["tuning"] = {{"shots", shots.size()},  {"epoch_mean", trace.epoch_mean},
                        {"initial", first},       {"final", last},
                        {"tuned_robust", t.robust_acc}, {"tuned_clean", t.clean_acc},
                        {"empty_robust", e.robust_acc}, {"empty_clean", e.clean_acc}};
    const bool ok = t.robust_acc >= e.robust_acc && last <= 0.8 * first;
    return {ok, fmt("robust accuracy tuned %.2f%% vs empty prompts %.2f%%; L_PT epoch mean %.4f -> %.4f (%.1f%% "
                    "lower, limit 20%%)",
                    t.robust_acc, e.robust_acc, first, last, 100.0 * (1.0 - last / first))};
}

Outcome tstar_report(const Workspace& ws, const AttackedSet& set, const PromptEmbedding& L, const PromptEmbedding& R,
                     int n, const fs::path& dir, json* out) {
    const ExperimentConfig& cfg = ws.config();
    AttackedSet sub = set;
    sub.ids.resize(n);
    sub.labels.resize(n);
    sub.clean.resize(n);
    sub.adv.resize(n);
    sub.specs.resize(n);
    const DiffenderDefense d(ws.denoiser(), ws.schedule(), cfg.defense, L.conditioning(), R.conditioning());
    const std::vector<double> grid{0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8};
    const TStarReport rep = sweep_tstar(sub, grid, ws.denoiser(), ws.schedule(), d, R.conditioning(),
                                        cfg.defense.inpaint_steps, cfg.defense.inpaint_steps, cfg.seed);
    const fs::path path = dir / "tstar_sweep.json";
    {
        std::ofstream f(path);
        f << rep.to_json().dump(2) << "\n";
    }
    const bool written = fs::exists(path) && json::parse(read_file(path)).contains("points");
    (*out)["tstar"] = {{"images", n},
                       {"diffender_fraction", rep.diffender_fraction},
                       {"no_point_satisfies_both", rep.no_point_satisfies_both}};
    return {written && rep.consistent(),
            fmt("report written and consistent; no grid point meets both conditions: %s; DIFFender meets both on "
                "%.1f%% of %d images",
                rep.no_point_satisfies_both ? "yes" : "no", 100.0 * rep.diffender_fraction, n)};
}

Outcome determinism(const std::string& cli, const ExperimentConfig& cfg, const fs::path& dir) {
    ExperimentConfig small = cfg;
    small.eval.n_images = 16;
    const fs::path conf = dir / "eval_config.json";
    {
        std::ofstream f(conf);
        f << small.to_json().dump(2) << "\n";
    }
    const std::string defenses = "none,diffender,nr";
    for (const char* run : {"run_a", "run_b"}) {
        const std::string cmd = "\"" + cli + "\" eval --config \"" + conf.string() + "\" --defenses " + defenses +
                                " --triptychs 0 --out \"" + (dir / run).string() + "\" > \"" +
                                (dir / (std::string(run) + ".log")).string() + "\" 2>&1";
        if (std::system(cmd.c_str()) != 0) return {false, std::string("eval command failed: ") + cmd};
    }
    const std::string a = read_file(dir / "run_a" / "results.csv"), b = read_file(dir / "run_b" / "results.csv");
    const bool same = !a.empty() && a == b;
    const ResultTable table = ResultTable::from_csv(a);
    int checked = 0, mismatched = 0;
    for (const auto& rec : table.records()) {
        std::string key = rec.defense == "none" ? "none" : rec.defense == "DIFFender" ? "diffender" : "nr";
        const auto [clean, robust] = recount(read_verdicts(dir / "run_a" / "verdicts" / (key + ".csv")));
        ++checked;
        if (fmt("%.4f", clean) != fmt("%.4f", rec.clean_acc) || fmt("%.4f", robust) != fmt("%.4f", rec.robust_acc))
            ++mismatched;
    }
    const bool ok = same && checked == 3 && mismatched == 0;
    return {ok, fmt("results.csv byte-identical across runs: %s; %d/%d rows recount exactly from verdicts",
                    same ? "yes" : "no", checked - mismatched, checked)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance run on the toy setup"};
    std::string config, work_dir, out = "acceptance_out", cli;
    int aap_n = 64, eff_n = 128, sweep_n = 32;
    app.add_option("--config", config, "experiment config JSON")->required();
    app.add_option("--work-dir", work_dir, "checkpoint directory");
    app.add_option("--out", out, "artifact directory");
    app.add_option("--cli", cli, "path of the diffender executable")->required();
    app.add_option("--aap-images", aap_n);
    app.add_option("--eval-images", eff_n);
    app.add_option("--sweep-images", sweep_n);
    CLI11_PARSE(app, argc, argv);

    ExperimentConfig cfg;
    try {
        cfg = ExperimentConfig::load(config);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    }
    if (!work_dir.empty()) cfg.work_dir = fs::absolute(work_dir);
    const fs::path dir = fs::absolute(out);
    fs::create_directories(dir);
    const NoiseSchedule sched = make_schedule(cfg.schedule.T, cfg.schedule.beta_min, cfg.schedule.beta_max);

    report(1, "one-step inversion", [&] { return inversion(sched); });
    report(2, "noising variance", [&] { return noising_variance(sched); });
    report(3, "gradient suite", gradient_suite);
    report(4, "morphology properties", morphology_suite);

    std::optional<Workspace> ws;
    try {
        ws = Workspace::open(cfg, true, &std::cerr);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "cannot prepare the toy models: %s\n", e.what());
    }
    const auto need_ws = [&](auto f) {
        return [&, f]() -> Outcome {
            if (!ws) return {false, "toy models unavailable"};
            return f();
        };
    };
    report(5, "compositing contract", need_ws([&] { return compositing(*ws); }));

    json summary = {{"config_hash", cfg.hash()}};
    AttackedSet set;
    PromptEmbedding L, R;
    if (ws) {
        set = make_attack_set(ws->data(), ws->eval_subset(std::max(eff_n, aap_n)), ws->classifier(), "AdvP",
                              ws->attack_options(), cfg.seed);
        set.save(dir / "attack_AdvP");
        L = ws->manual_prompt(PromptRole::Localization);
        R = ws->manual_prompt(PromptRole::Restoration);
    }
    report(6, "patch localization", need_ws([&] { return aap_localization(*ws, set, L, R, aap_n, &summary); }));
    report(7, "defense ordering", need_ws([&] { return efficacy(*ws, set, L, R, &summary); }));
    report(8, "prompt tuning", need_ws([&] { return tuning_effect(*ws, set, dir, &summary); }));
    report(9, "purification trade-off report",
           need_ws([&] { return tstar_report(*ws, set, L, R, sweep_n, dir, &summary); }));
    report(10, "determinism and recount", need_ws([&] { return determinism(cli, cfg, dir); }));

    std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
