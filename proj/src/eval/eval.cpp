#include "diffender/eval.hpp"

#include "diffender/diffusion.hpp"
#include "diffender/errors.hpp"
#include "diffender/png_io.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

namespace diffender {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

void check_name(const std::string& s) {
    if (s.find_first_of(",\n\r\"") != std::string::npos) throw ParamError("names may not contain commas or quotes: " + s);
}

std::string text_of(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

void ResultTable::add(EvalRecord r) {
    check_name(r.defense);
    check_name(r.attack);
    check_name(r.classifier);
    check_name(r.config_hash);
    if (r.n < 1) throw ParamError("record needs at least one image");
    if (r.clean_acc < 0 || r.clean_acc > 100 || r.robust_acc < 0 || r.robust_acc > 100)
        throw RangeError("accuracy outside [0,100]");
    for (const auto& e : records_)
        if (e.defense == r.defense && e.attack == r.attack && e.classifier == r.classifier)
            throw ParamError("duplicate result key " + r.defense + "/" + r.attack + "/" + r.classifier);
    records_.push_back(std::move(r));
}

std::string ResultTable::csv_header() { return "defense,attack,classifier,clean_acc,robust_acc,n,seed,config_hash"; }

std::string ResultTable::to_csv() const {
    std::string s = csv_header() + "\n";
    for (const auto& r : records_) {
        s += r.defense + "," + r.attack + "," + r.classifier + "," + fmt_pct(r.clean_acc) + "," + fmt_pct(r.robust_acc) +
             "," + std::to_string(r.n) + "," + std::to_string(r.seed) + "," + r.config_hash + "\n";
    }
    return s;
}

ResultTable ResultTable::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != csv_header()) throw DataError("unexpected CSV header");
    ResultTable t;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 8) throw DataError("malformed CSV row: " + line);
        EvalRecord r;
        r.defense = f[0];
        r.attack = f[1];
        r.classifier = f[2];
        r.clean_acc = std::stod(f[3]);
        r.robust_acc = std::stod(f[4]);
        r.n = std::stoi(f[5]);
        r.seed = std::stoull(f[6]);
        r.config_hash = f[7];
        t.add(std::move(r));
    }
    return t;
}

json ResultTable::to_json() const {
    json rows = json::array();
    for (const auto& r : records_)
        rows.push_back({{"defense", r.defense}, {"attack", r.attack}, {"classifier", r.classifier},
                        {"clean_acc", r.clean_acc}, {"robust_acc", r.robust_acc}, {"n", r.n}, {"seed", r.seed},
                        {"config_hash", r.config_hash}, {"wall_time", r.wall_time}});
    return {{"metadata", metadata}, {"records", rows}};
}

std::vector<int> select_eval_subset(const ToyDataset& data, const ClassifierModel& clf, int n, std::uint64_t seed) {
    if (n < 1) throw ParamError("subset size must be positive");
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    RngStream rng(seed, 0x5e1ec7ULL);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    std::vector<int> out;
    for (int idx : order) {
        if (clf.predict(data.images[idx]) == data.labels[idx]) out.push_back(idx);
        if (static_cast<int>(out.size()) == n) return out;
    }
    throw DataError("only " + std::to_string(out.size()) + " correctly classified images, need " + std::to_string(n));
}

void AttackedSet::save(const fs::path& dir) const {
    fs::create_directories(dir);
    json entries = json::array();
    for (std::size_t i = 0; i < size(); ++i) {
        const std::string id = std::to_string(ids[i]);
        write_png(dir / ("clean_" + id + ".png"), clean[i]);
        write_png(dir / ("adv_" + id + ".png"), adv[i]);
        write_png(dir / ("mask_" + id + ".png"), mask_to_image(specs[i].mask()));
        entries.push_back({{"id", ids[i]}, {"label", labels[i]}, {"row", specs[i].row}, {"col", specs[i].col},
                           {"side", specs[i].side}});
    }
    write_text(dir / "manifest.json", json{{"attack", attack}, {"images", entries}}.dump(2) + "\n");
}

AttackedSet AttackedSet::load(const fs::path& dir) {
    json m;
    try {
        m = json::parse(text_of(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw IoError("bad attack manifest in " + dir.string() + ": " + e.what());
    }
    AttackedSet s;
    s.attack = m.at("attack");
    for (const auto& e : m.at("images")) {
        const int id = e.at("id");
        s.ids.push_back(id);
        s.labels.push_back(e.at("label"));
        s.clean.push_back(read_png(dir / ("clean_" + std::to_string(id) + ".png")));
        s.adv.push_back(read_png(dir / ("adv_" + std::to_string(id) + ".png")));
        PatchSpec p;
        p.row = e.at("row");
        p.col = e.at("col");
        p.side = e.at("side");
        p.image_h = s.adv.back().height();
        p.image_w = s.adv.back().width();
        p.content = Image(p.side, p.side, s.adv.back().channels());
        for (int c = 0; c < p.content.channels(); ++c)
            for (int y = 0; y < p.side; ++y)
                for (int x = 0; x < p.side; ++x) p.content(c, y, x) = s.adv.back()(c, p.row + y, p.col + x);
        p.validate();
        s.specs.push_back(std::move(p));
    }
    return s;
}

namespace {

AttackOptions options_for(const std::string& attack, AttackOptions opts) {
    if (attack == "AdvP") {
        opts.init = PatchInit::Random;
    } else if (attack == "LaVAN") {
        opts.init = PatchInit::Gray;
    } else {
        throw ParamError("unknown attack '" + attack + "' (expected AdvP or LaVAN)");
    }
    return opts;
}

AttackedSet build_set(const ToyDataset& data, const std::vector<int>& ids, const std::string& name,
                      const std::function<AttackResult(const Image&, int, RngStream&)>& attack, std::uint64_t seed) {
    AttackedSet s;
    s.attack = name;
    for (int id : ids) {
        if (id < 0 || id >= static_cast<int>(data.size())) throw DataError("image id out of range");
        RngStream rng(seed, static_cast<std::uint64_t>(id));
        AttackResult r = attack(data.images[id], data.labels[id], rng);
        s.ids.push_back(id);
        s.labels.push_back(data.labels[id]);
        s.clean.push_back(data.images[id]);
        s.adv.push_back(std::move(r.image));
        s.specs.push_back(std::move(r.spec));
    }
    return s;
}

}  // namespace

AttackedSet make_attack_set(const ToyDataset& data, const std::vector<int>& ids, const ClassifierModel& clf,
                            const std::string& attack, const AttackOptions& opts, std::uint64_t seed) {
    const AttackOptions o = options_for(attack, opts);
    return build_set(
        data, ids, attack,
        [&](const Image& x, int y, RngStream& rng) { return patch_attack(x, y, clf, o, rng); }, seed);
}

AttackedSet make_adaptive_attack_set(const ToyDataset& data, const std::vector<int>& ids, const ClassifierModel& clf,
                                     const Defense& defense, const std::string& attack, const AttackOptions& opts,
                                     std::uint64_t seed) {
    const AttackOptions o = options_for(attack, opts);
    return build_set(
        data, ids, attack + "-adaptive",
        [&](const Image& x, int y, RngStream& rng) { return bpda_adaptive_attack(x, y, clf, defense, o, rng); },
        seed);
}

EvalRecord evaluate(const Defense& defense, const AttackedSet& set, const ClassifierModel& clf,
                    const std::string& classifier_name, std::uint64_t seed, const std::string& config_hash,
                    std::vector<ImageVerdict>* verdicts) {
    if (set.size() == 0) throw DataError("attack set is empty");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ImageVerdict> v;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const RngStream base(seed, static_cast<std::uint64_t>(set.ids[i]));
        ImageVerdict iv;
        iv.image_id = set.ids[i];
        iv.label = set.labels[i];
        iv.clean_pred = clf.predict(defense.apply(set.clean[i], base.substream(0)));
        const DefenseResult r = defense.run(set.adv[i], base.substream(1));
        iv.robust_pred = clf.predict(r.output);
        iv.mask_pixels = static_cast<int>(r.mask.count());
        v.push_back(iv);
    }
    EvalRecord rec;
    rec.defense = defense.name();
    rec.attack = set.attack;
    rec.classifier = classifier_name;
    std::tie(rec.clean_acc, rec.robust_acc) = recount(v);
    rec.n = static_cast<int>(v.size());
    rec.seed = seed;
    rec.config_hash = config_hash;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (verdicts) *verdicts = std::move(v);
    return rec;
}

std::pair<double, double> recount(const std::vector<ImageVerdict>& verdicts) {
    if (verdicts.empty()) return {0.0, 0.0};
    int clean = 0, robust = 0;
    for (const auto& v : verdicts) {
        clean += v.clean_pred == v.label;
        robust += v.robust_pred == v.label;
    }
    const double n = static_cast<double>(verdicts.size());
    return {100.0 * clean / n, 100.0 * robust / n};
}

void write_verdicts(const fs::path& path, const std::vector<ImageVerdict>& v) {
    std::string s = "image_id,label,clean_pred,robust_pred,mask_pixels\n";
    for (const auto& e : v)
        s += std::to_string(e.image_id) + "," + std::to_string(e.label) + "," + std::to_string(e.clean_pred) + "," +
             std::to_string(e.robust_pred) + "," + std::to_string(e.mask_pixels) + "\n";
    write_text(path, s);
}

std::vector<ImageVerdict> read_verdicts(const fs::path& path) {
    std::istringstream in(text_of(path));
    std::string line;
    std::getline(in, line);
    std::vector<ImageVerdict> v;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 5) throw DataError("malformed verdict row: " + line);
        v.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4])});
    }
    return v;
}

AblationKind parse_ablation_kind(const std::string& s) {
    if (s == "loss") return AblationKind::Loss;
    if (s == "patch_size") return AblationKind::PatchSize;
    if (s == "no_restore") return AblationKind::NoRestore;
    if (s == "prompt_form") return AblationKind::PromptForm;
    throw ParamError("unknown ablation '" + s + "' (loss, patch_size, no_restore, prompt_form)");
}

namespace {

LossWeights parse_loss_cell(const std::string& cell) {
    LossWeights w{0.0, 0.0, 0.0};
    for (const auto& term : split(cell, '+')) {
        if (term == "ce") {
            w.ce = 1.0;
        } else if (term == "l1") {
            w.l1 = 1.0;
        } else if (term == "perc") {
            w.perc = 1.0;
        } else {
            throw ParamError("unknown loss term '" + term + "'");
        }
    }
    return w;
}

bool has_tuned(const AblationContext& ctx) { return ctx.tuned_L.n() > 0 && ctx.tuned_R.n() > 0; }

}  // namespace

ResultTable run_ablation(AblationKind kind, const std::vector<std::string>& grid, const AblationContext& ctx) {
    if (grid.empty()) throw ParamError("ablation grid is empty");
    if (!ctx.model || !ctx.sched || !ctx.clf) throw ParamError("ablation context is incomplete");
    const PromptEmbedding& best_L = has_tuned(ctx) ? ctx.tuned_L : ctx.manual_L;
    const PromptEmbedding& best_R = has_tuned(ctx) ? ctx.tuned_R : ctx.manual_R;
    ResultTable table;
    for (const auto& cell : grid) {
        EvalRecord rec;
        switch (kind) {
            case AblationKind::Loss: {
                TuneOptions opts = ctx.tune;
                opts.weights = parse_loss_cell(cell);
                const auto [L, R] = tune_prompts(ctx.few_shot, ctx.manual_L, ctx.manual_R, opts, *ctx.model, *ctx.sched,
                                                 ctx.defense, *ctx.clf, ctx.perceptual, RngStream(ctx.seed, 0x7e57));
                const DiffenderDefense d(*ctx.model, *ctx.sched, ctx.defense, L.conditioning(), R.conditioning(),
                                         RestoreMode::Inpaint, "DIFFender[" + cell + "]");
                rec = evaluate(d, ctx.attacked, *ctx.clf, ctx.classifier_name, ctx.seed, ctx.config_hash);
                break;
            }
            case AblationKind::PatchSize: {
                AttackOptions opts = ctx.attack_opts;
                opts.area_frac = std::stod(cell);
                AttackedSet set = make_attack_set(*ctx.data, ctx.eval_ids, *ctx.clf, "AdvP", opts, ctx.seed);
                set.attack = "AdvP@" + cell;
                const DiffenderDefense d(*ctx.model, *ctx.sched, ctx.defense, best_L.conditioning(),
                                         best_R.conditioning());
                rec = evaluate(d, set, *ctx.clf, ctx.classifier_name, ctx.seed, ctx.config_hash);
                break;
            }
            case AblationKind::NoRestore: {
                RestoreMode mode;
                if (cell == "restore") {
                    mode = RestoreMode::Inpaint;
                } else if (cell == "zero-fill") {
                    mode = RestoreMode::ZeroFill;
                } else {
                    throw ParamError("no_restore cells are 'restore' or 'zero-fill'");
                }
                const DiffenderDefense d(*ctx.model, *ctx.sched, ctx.defense, best_L.conditioning(),
                                         best_R.conditioning(), mode,
                                         mode == RestoreMode::Inpaint ? "DIFFender" : "DIFFender(NR)");
                rec = evaluate(d, ctx.attacked, *ctx.clf, ctx.classifier_name, ctx.seed, ctx.config_hash);
                break;
            }
            case AblationKind::PromptForm: {
                Conditioning L, R;
                if (cell == "empty") {
                    L = R = Conditioning::empty(ctx.model->cond_dim());
                } else if (cell == "manual") {
                    L = ctx.manual_L.conditioning();
                    R = ctx.manual_R.conditioning();
                } else if (cell == "tuned") {
                    if (!has_tuned(ctx)) throw ParamError("no tuned prompts available");
                    L = ctx.tuned_L.conditioning();
                    R = ctx.tuned_R.conditioning();
                } else {
                    throw ParamError("prompt_form cells are 'empty', 'manual' or 'tuned'");
                }
                const DiffenderDefense d(*ctx.model, *ctx.sched, ctx.defense, L, R, RestoreMode::Inpaint,
                                         "DIFFender(" + cell + ")");
                rec = evaluate(d, ctx.attacked, *ctx.clf, ctx.classifier_name, ctx.seed, ctx.config_hash);
                break;
            }
        }
        table.add(std::move(rec));
    }
    return table;
}

namespace {

Image bar_chart(const ResultTable& table) {
    const int bar = 12, gap = 4, group_gap = 14, height = 120, margin = 8;
    const int n = static_cast<int>(table.records().size());
    const int W = 2 * margin + n * (2 * bar + gap) + (n - 1) * group_gap;
    const int H = height + 2 * margin;
    Image img(H, W, 3, 1.0);
    auto fill = [&](int x0, int w, double pct, double r, double g, double b) {
        const int h = static_cast<int>(std::lround(height * pct / 100.0));
        for (int y = H - margin - h; y < H - margin; ++y)
            for (int x = x0; x < x0 + w; ++x) {
                img(0, y, x) = r;
                img(1, y, x) = g;
                img(2, y, x) = b;
            }
    };
    int x = margin;
    for (const auto& r : table.records()) {
        fill(x, bar, r.clean_acc, 0.6, 0.6, 0.6);
        fill(x + bar + gap, bar, r.robust_acc, 0.15, 0.35, 0.7);
        x += 2 * bar + gap + group_gap;
    }
    for (int xx = 0; xx < W; ++xx)
        for (int c = 0; c < 3; ++c) img(c, H - margin, xx) = 0.0;
    return img;
}

}  // namespace

void emit_outputs(const ResultTable& table, const fs::path& dir, const std::string& stem) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_text(dir / (stem + ".csv"), table.to_csv());
    write_text(dir / (stem + ".json"), table.to_json().dump(2) + "\n");
    if (!table.empty()) write_png(dir / (stem + ".png"), bar_chart(table));
}

void write_triptych(const fs::path& path, const Image& adv, const BinaryMask& mask, const Image& restored) {
    check_mask_shape(adv, mask);
    write_png(path, hstack({upscale(adv, 4), upscale(mask_to_image(mask), 4), upscale(restored, 4)}, 4));
}

json reference_numbers() {
    // Inception-v3 on ImageNet, 512 correctly classified images.
    return {
        {"status", "not reproducible at desk scale"},
        {"classifier", "Inception-v3"},
        {"accuracy_percent",
         {{"Undefended", {{"Clean", 100.0}, {"AdvP", 0.0}, {"LaVAN", 8.2}, {"GDPA", 64.8}, {"RHDE", 39.8}}},
          {"DiffPure", {{"Clean", 65.2}, {"AdvP", 10.5}, {"LaVAN", 15.2}, {"GDPA", 67.6}, {"RHDE", 44.9}}},
          {"DIFFender", {{"Clean", 91.4}, {"AdvP", 88.3}, {"LaVAN", 71.9}, {"GDPA", 75.0}, {"RHDE", 53.5}}},
          {"DIFFender(NR)", {{"Clean", 86.3}, {"AdvP", 84.0}, {"LaVAN", 66.8}, {"GDPA", 69.5}, {"RHDE", 48.0}}},
          {"DIFFender(empty)", {{"Clean", 89.1}, {"AdvP", 76.4}, {"LaVAN", 66.8}, {"GDPA", 71.1}, {"RHDE", 47.0}}},
          {"DIFFender(manual)", {{"Clean", 87.3}, {"AdvP", 77.9}, {"LaVAN", 68.2}, {"GDPA", 70.3}, {"RHDE", 47.8}}}}},
        {"loss_ablation_percent",
         {{"l1+perc", {{"Clean", 91.8}, {"AdvP", 76.2}, {"LaVAN", 66.0}, {"GDPA", 72.3}, {"RHDE", 49.2}}},
          {"ce+perc", {{"Clean", 88.3}, {"AdvP", 87.1}, {"LaVAN", 69.5}, {"GDPA", 73.8}, {"RHDE", 52.7}}},
          {"ce+l1", {{"Clean", 90.2}, {"AdvP", 87.1}, {"LaVAN", 69.1}, {"GDPA", 73.0}, {"RHDE", 52.0}}},
          {"ce+l1+perc", {{"Clean", 91.4}, {"AdvP", 88.3}, {"LaVAN", 71.9}, {"GDPA", 75.0}, {"RHDE", 53.5}}}}},
        {"patch_size_percent",
         {{"sizes", {0.005, 0.01, 0.05, 0.10, 0.15}},
          {"Undefended", {64.3, 50.8, 0.0, 0.0, 0.0}},
          {"DIFFender", {86.1, 87.3, 88.3, 70.5, 56.6}}}},
    };
}

}  // namespace diffender

namespace diffender {

namespace {

constexpr double kReferenceRatio = 0.15;
constexpr double kPatchSlack = 1.5;

bool purified(const Residuals& r, double e_ref) { return r.patch <= kPatchSlack * std::max(r.background, e_ref); }

}  // namespace

Residuals residuals(const Image& out, const Image& clean, const BinaryMask& patch) {
    if (!out.same_shape(clean)) throw ShapeError("image shapes differ");
    check_mask_shape(out, patch);
    double sp = 0.0, sb = 0.0, sq = 0.0;
    std::size_t np = 0, nb = 0;
    for (int c = 0; c < out.channels(); ++c)
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x) {
                const double d = out(c, y, x) - clean(c, y, x);
                sq += d * d;
                if (patch(y, x)) {
                    sp += std::abs(d);
                    ++np;
                } else {
                    sb += std::abs(d);
                    ++nb;
                }
            }
    return {np ? sp / np : 0.0, nb ? sb / nb : 0.0, std::sqrt(sq / static_cast<double>(out.size()))};
}

TStarReport sweep_tstar(const AttackedSet& set, const std::vector<double>& grid, const DenoiserModel& model,
                        const NoiseSchedule& sched, const Defense& defense, const Conditioning& prompt_R,
                        int inpaint_steps, int max_steps, std::uint64_t seed) {
    if (set.size() == 0) throw DataError("attack set is empty");
    auto ref_it = std::find_if(grid.begin(), grid.end(), [](double t) { return std::abs(t - kReferenceRatio) < 1e-12; });
    if (ref_it == grid.end()) throw ParamError("t* grid must include 0.15");
    const std::size_t ref = static_cast<std::size_t>(ref_it - grid.begin());
    const std::size_t n = set.size();

    TStarReport rep;
    rep.sweep.assign(grid.size(), std::vector<Residuals>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const RngStream base(seed, static_cast<std::uint64_t>(set.ids[i]));
        const BinaryMask patch = set.specs[i].mask();
        RngStream r_ref = base.substream(0xe7ef);
        const Image filled = inpaint(set.clean[i], patch, prompt_R, model, sched, inpaint_steps, r_ref);
        rep.e_ref.push_back(residuals(filled, set.clean[i], patch).patch);
        rep.diffender.push_back(residuals(defense.apply(set.adv[i], base.substream(1)), set.clean[i], patch));
        for (std::size_t g = 0; g < grid.size(); ++g) {
            RngStream r = base.substream(0x5eed0000ULL + g);
            const Image out = diffpure_baseline(set.adv[i], grid[g], model, sched, r, max_steps);
            rep.sweep[g][i] = residuals(out, set.clean[i], patch);
        }
    }

    double e_ref_mean = 0.0;
    for (double e : rep.e_ref) e_ref_mean += e / n;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        TStarPoint p;
        p.t_star = grid[g];
        for (const auto& r : rep.sweep[g]) {
            p.mean.patch += r.patch / n;
            p.mean.background += r.background / n;
            p.mean.global_l2 += r.global_l2 / n;
        }
        rep.points.push_back(p);
    }
    rep.reference_l2 = rep.points[ref].mean.global_l2;
    rep.no_point_satisfies_both = true;
    for (auto& p : rep.points) {
        p.purified = purified(p.mean, e_ref_mean);
        p.faithful = p.mean.global_l2 <= rep.reference_l2;
        if (p.purified && p.faithful) rep.no_point_satisfies_both = false;
    }
    int ok = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool good = purified(rep.diffender[i], rep.e_ref[i]) &&
                          rep.diffender[i].global_l2 <= rep.sweep[ref][i].global_l2;
        rep.diffender_ok.push_back(good);
        ok += good;
    }
    rep.diffender_fraction = static_cast<double>(ok) / n;
    return rep;
}

bool TStarReport::consistent() const {
    const std::size_t n = e_ref.size();
    if (n == 0 || diffender.size() != n || diffender_ok.size() != n || sweep.size() != points.size()) return false;
    auto ref_it = std::find_if(points.begin(), points.end(),
                               [](const TStarPoint& p) { return std::abs(p.t_star - kReferenceRatio) < 1e-12; });
    if (ref_it == points.end()) return false;
    const std::size_t ref = static_cast<std::size_t>(ref_it - points.begin());
    double e_mean = 0.0;
    for (double e : e_ref) e_mean += e / n;
    bool none = true;
    for (std::size_t g = 0; g < points.size(); ++g) {
        if (sweep[g].size() != n) return false;
        Residuals m;
        for (const auto& r : sweep[g]) {
            m.patch += r.patch / n;
            m.background += r.background / n;
            m.global_l2 += r.global_l2 / n;
        }
        const auto& p = points[g];
        if (std::abs(m.patch - p.mean.patch) > 1e-12 || std::abs(m.global_l2 - p.mean.global_l2) > 1e-12) return false;
        if (p.purified != purified(p.mean, e_mean)) return false;
        if (p.faithful != (p.mean.global_l2 <= points[ref].mean.global_l2)) return false;
        if (p.purified && p.faithful) none = false;
    }
    if (none != no_point_satisfies_both) return false;
    int ok = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool good = purified(diffender[i], e_ref[i]) && diffender[i].global_l2 <= sweep[ref][i].global_l2;
        if (good != diffender_ok[i]) return false;
        ok += good;
    }
    return std::abs(diffender_fraction - static_cast<double>(ok) / n) < 1e-12;
}

nlohmann::json TStarReport::to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points)
        pts.push_back({{"t_star", p.t_star}, {"patch_residual", p.mean.patch},
                       {"background_residual", p.mean.background}, {"global_l2", p.mean.global_l2},
                       {"purified", p.purified}, {"faithful", p.faithful}});
    nlohmann::json per_image = nlohmann::json::array();
    for (std::size_t i = 0; i < diffender.size(); ++i)
        per_image.push_back({{"e_ref", e_ref[i]}, {"patch_residual", diffender[i].patch},
                             {"background_residual", diffender[i].background},
                             {"global_l2", diffender[i].global_l2}, {"ok", static_cast<bool>(diffender_ok[i])}});
    return {{"points", pts},
            {"reference_l2", reference_l2},
            {"no_point_satisfies_both", no_point_satisfies_both},
            {"diffender_fraction", diffender_fraction},
            {"diffender", per_image},
            {"consistent", consistent()}};
}

}  // namespace diffender
