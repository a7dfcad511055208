#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "ctsynth/image_io.hpp"
#include "ctsynth/metrics.hpp"
#include "ctsynth/seeding.hpp"
#include "ctsynth/synthesis.hpp"

namespace ctsynth {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general);
    return std::string(buf, r.ptr);
}

struct RunDir {
    fs::path root;

    explicit RunDir(fs::path r) : root(std::move(r)) {
        fs::create_directories(root / "checkpoints");
        fs::create_directories(root / "images");
    }
    fs::path config() const { return root / "config.resolved"; }
    fs::path log() const { return root / "log.csv"; }
    fs::path checkpoints() const { return root / "checkpoints"; }
    fs::path images() const { return root / "images"; }
    fs::path report() const { return root / "report.csv"; }
};

void write_text(const fs::path &p, const std::string &s) {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << s;
}

RunConfig resolve_config(const std::string &path, const std::vector<std::string> &sets) {
    RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
    for (const auto &s : sets) apply_override(cfg, s);
    cfg.validate();
    return cfg;
}

std::vector<PairedSample> training_set(const RunConfig &cfg, const DatasetManifest &dataset) {
    if (cfg.data_manifest.empty()) return materialize_split(dataset, Split::TrainSynthesis);
    std::vector<PairedSample> out;
    for (const auto &e : read_manifest(cfg.data_manifest)) out.push_back(load_pair(e));
    return out;
}

std::vector<PairedSample> heldout_set(const RunConfig &cfg, const DatasetManifest &dataset) {
    auto held = materialize_split(dataset, Split::TestSynthesis);
    if (cfg.eval.n_heldout > 0 && static_cast<size_t>(cfg.eval.n_heldout) < held.size()) held.resize(cfg.eval.n_heldout);
    return held;
}

struct Quality {
    double psnr = 0.0, ssim = 0.0, rmse = 0.0, fid = 0.0;
};

// Lung-only comparison of synthesized and real held-out images.
Quality lung_quality(Generator &g, const std::vector<PairedSample> &held, FeatureExtractor &extractor) {
    Quality q;
    if (held.empty()) return q;
    std::vector<SegMap> maps;
    for (const auto &s : held) maps.push_back(s.map);
    auto synth = synthesize(maps, g);
    std::vector<CTImage> real_l, fake_l;
    for (size_t i = 0; i < held.size(); ++i) {
        real_l.push_back(lung_only(held[i].image, held[i].map));
        fake_l.push_back(lung_only(synth[i], held[i].map));
        q.psnr += psnr(fake_l.back(), real_l.back());
        q.ssim += ssim(fake_l.back(), real_l.back());
        q.rmse += rmse(fake_l.back(), real_l.back());
    }
    const double n = static_cast<double>(held.size());
    q.psnr /= n;
    q.ssim /= n;
    q.rmse /= n;
    q.fid = held.size() >= 2 ? fid(embed(extractor, real_l), embed(extractor, fake_l)) : 0.0;
    return q;
}

void write_heldout_grid(const fs::path &path, Generator &g, const std::vector<PairedSample> &held) {
    if (held.empty()) return;
    std::vector<CTImage> tiles;
    std::vector<SegMap> maps;
    for (const auto &s : held) maps.push_back(s.map);
    auto synth = synthesize(maps, g);
    for (const auto &s : held) tiles.push_back(s.image);
    for (size_t i = 0; i < held.size(); ++i) tiles.push_back(composite(synth[i], held[i].image, held[i].map));
    write_grid_png(path, tiles, static_cast<int>(held.size()));
}

struct TrainResult {
    Quality before, after;
    int64_t steps = 0;
};

TrainResult train_into(const RunConfig &cfg, const std::string &stage, const std::string &resume, const RunDir &dir,
                       std::ostream &out) {
    write_text(dir.config(), to_toml(cfg));
    const auto dataset = build_dataset(cfg.data);
    const auto train = training_set(cfg, dataset);
    const auto held = heldout_set(cfg, dataset);
    auto extractor = make_extractor(cfg.eval.extractor);

    Trainer trainer = resume.empty() ? Trainer(cfg.train) : Trainer::load(resume);
    trainer.set_data(train);
    trainer.set_diagnostics_dir(dir.root / "diagnostics");
    std::ofstream log(dir.log(), resume.empty() ? std::ios::trunc : std::ios::app);
    if (resume.empty()) write_log_header(log);
    trainer.set_log(&log);

    TrainResult result;
    result.before = lung_quality(trainer.generator(), held, *extractor);
    std::vector<Stage> stages;
    if (stage == "all") {
        stages = {Stage::Global, Stage::Local, Stage::Joint};
    } else {
        stages = {static_cast<Stage>(std::stoi(stage))};
    }
    for (auto s : stages) {
        const auto reports = trainer.run_stage(s);
        trainer.save(dir.checkpoints() / ("stage" + std::to_string(static_cast<int>(s))));
        out << "stage " << static_cast<int>(s) << ": " << reports.size() << " steps\n";
    }
    trainer.save(dir.checkpoints() / "final");
    result.after = lung_quality(trainer.generator(), held, *extractor);
    result.steps = trainer.progress().step;
    write_heldout_grid(dir.images() / "heldout.png", trainer.generator(), held);
    return result;
}

void write_train_report(const fs::path &path, const TrainResult &r) {
    std::ofstream out(path);
    out << "metric,value\n";
    out << "steps," << r.steps << "\n";
    out << "psnr_lung_initial," << num(r.before.psnr) << "\n";
    out << "psnr_lung," << num(r.after.psnr) << "\n";
    out << "ssim_lung," << num(r.after.ssim) << "\n";
    out << "rmse_lung," << num(r.after.rmse) << "\n";
    out << "fid_lung," << num(r.after.fid) << "\n";
}

// ---- subcommands ----

int cmd_phantom(const std::string &config, const std::vector<std::string> &sets, const fs::path &out_dir,
                std::ostream &out) {
    auto cfg = resolve_config(config, sets);
    RunDir dir(out_dir);
    write_text(dir.config(), to_toml(cfg));
    const auto dataset = build_dataset(cfg.data);
    const auto manifests = write_dataset(dataset, out_dir / "data");
    std::vector<CTImage> tiles;
    for (const auto &s : materialize_split(dataset, Split::TrainSynthesis)) {
        if (tiles.size() >= 8) break;
        tiles.push_back(s.image);
    }
    if (!tiles.empty()) write_grid_png(dir.images() / "preview.png", tiles, 4);
    for (const auto &m : manifests) out << m.string() << "\n";
    return kExitOk;
}

int cmd_train(const std::string &config, const std::vector<std::string> &sets, const std::string &stage,
              const std::string &resume, const fs::path &out_dir, std::ostream &out) {
    auto cfg = resolve_config(config, sets);
    if (!resume.empty()) {
        cfg.train = train_config_from_toml(CheckpointData::load(resume).manifest, resume);
        cfg.validate();
    }
    RunDir dir(out_dir);
    const auto r = train_into(cfg, stage, resume, dir, out);
    write_train_report(dir.report(), r);
    out << "lung PSNR " << num(r.before.psnr) << " -> " << num(r.after.psnr) << " dB\n";
    return kExitOk;
}

int cmd_synthesize(const fs::path &ckpt, const fs::path &manifest, const fs::path &out_dir, std::ostream &out,
                   std::ostream &err) {
    auto g = load_generator(ckpt);
    auto r = batch_synthesize(manifest, g, out_dir);
    for (const auto &f : r.failures) err << "failed: " << f << "\n";
    out << r.written << " samples written, index " << r.index.string() << "\n";
    return kExitOk;
}

std::string strip_suffix(const std::string &stem) {
    for (const char *suffix : {"_composite", "_lung", "_image", "_map"}) {
        const std::string s(suffix);
        if (stem.size() > s.size() && stem.compare(stem.size() - s.size(), s.size(), s) == 0) {
            return stem.substr(0, stem.size() - s.size());
        }
    }
    return stem;
}

// Files keyed by sample id; a file named <id><preferred>.png wins over other files of that id.
std::map<std::string, fs::path> index_dir(const fs::path &dir, const std::string &preferred) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> paths;
    for (const auto &e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".png") paths.push_back(e.path());
    }
    std::sort(paths.begin(), paths.end());
    std::map<std::string, fs::path> files;
    for (const auto &p : paths) {
        const auto stem = p.stem().string();
        const auto id = strip_suffix(stem);
        if (stem == id + preferred || !files.count(id)) files[id] = p;
    }
    return files;
}

int cmd_evaluate(const fs::path &pred_dir, const fs::path &ref_dir, const fs::path &mask_dir, int folds,
                 const std::string &kind, const std::string &extractor_spec, const fs::path &report,
                 std::ostream &out) {
    const auto preds = index_dir(pred_dir, kind == "lung" ? "_lung" : "_composite");
    const auto refs = index_dir(ref_dir, "_image");
    const auto masks = index_dir(mask_dir, "_map");
    std::vector<double> ps, ss, rs;
    std::vector<CTImage> real, fake;
    for (const auto &[id, p] : preds) {
        auto r = refs.find(id);
        auto m = masks.find(id);
        if (r == refs.end() || m == masks.end()) throw DataError("no reference or mask for " + id);
        auto map = read_map_png(m->second);
        auto a = read_image_png(p);
        auto b = read_image_png(r->second);
        if (kind == "lung") {
            a = lung_only(a, map);
            b = lung_only(b, map);
        }
        ps.push_back(psnr(a, b));
        ss.push_back(ssim(a, b));
        rs.push_back(rmse(a, b));
        fake.push_back(a);
        real.push_back(b);
    }
    if (preds.empty()) throw DataError("no predictions found in " + pred_dir.string());
    auto extractor = make_extractor(extractor_spec);
    const double f = real.size() >= 2 ? fid(embed(*extractor, real), embed(*extractor, fake)) : 0.0;

    if (!report.parent_path().empty()) fs::create_directories(report.parent_path());
    std::ofstream csv(report);
    if (!csv) throw DataError("cannot write " + report.string());
    csv << "metric,fold,value,mean,ci95\n";
    for (const auto &[name, values] : {std::pair{"psnr", ps}, std::pair{"ssim", ss}, std::pair{"rmse", rs}}) {
        const auto rep = fold_report(values, folds);
        for (size_t k = 0; k < rep.fold_means.size(); ++k) {
            csv << name << "," << k << "," << num(rep.fold_means[k]) << "," << num(rep.mean) << "," << num(rep.ci95) << "\n";
        }
        out << name << " " << num(rep.mean) << " +- " << num(rep.ci95) << "\n";
    }
    csv << "fid,all," << num(f) << "," << num(f) << ",0\n";
    out << "fid " << num(f) << "\n";
    return kExitOk;
}

int64_t pool_size(const RunConfig &cfg, size_t n_real) {
    if (cfg.seg_grid.synth_count > 0) return cfg.seg_grid.synth_count;
    double top = 0.0;
    for (double r : cfg.seg_grid.ratios) top = std::max(top, r);
    return synthetic_count(static_cast<int64_t>(n_real), MixSpec{MixMode::Add, top});
}

int cmd_seg_exp(const std::string &config, const std::vector<std::string> &sets, const std::string &ckpt,
                const fs::path &out_dir, std::ostream &out) {
    auto cfg = resolve_config(config, sets);
    RunDir dir(out_dir);
    if (ckpt.empty()) {
        out << "training the synthesizer first\n";
        train_into(cfg, "all", "", dir, out);
    } else {
        write_text(dir.config(), to_toml(cfg));
    }
    auto g = load_generator(ckpt.empty() ? dir.checkpoints() / "final" : fs::path(ckpt));
    const auto dataset = build_dataset(cfg.data);
    SegmentationRoles roles;
    const auto n_real = materialize_split(dataset, roles.train_real).size();
    const auto data = segmentation_data(dataset, g, pool_size(cfg, n_real), derive_seed(cfg.seg_grid.mix_seed, 99));
    SegExperiment exp{mix_grid(cfg), cfg.seg, cfg.eval.folds};
    const auto cells = run_experiment(exp, data);
    std::ofstream csv(dir.report());
    write_experiment_csv(csv, cells);
    std::ofstream seglog(dir.root / "seg_log.csv");
    seglog << "mode,ratio,step,loss\n";
    for (const auto &c : cells) {
        for (size_t i = 0; i < c.losses.size(); ++i) {
            seglog << mix_mode_name(c.spec.mode) << "," << num(c.spec.ratio) << "," << i << "," << num(c.losses[i]) << "\n";
        }
    }
    write_experiment_csv(out, cells);
    return kExitOk;
}

int cmd_ablate(const std::string &config, const std::vector<std::string> &sets, const fs::path &out_dir, bool with_seg,
               const std::vector<std::string> &only, std::ostream &out) {
    auto base = resolve_config(config, sets);
    RunDir dir(out_dir);
    write_text(dir.config(), to_toml(base));
    std::ofstream csv(dir.report());
    csv << "method,fid,psnr,ssim,rmse,dice_infection,status\n";
    for (auto &row : ablation_rows(base)) {
        if (!only.empty() && std::find(only.begin(), only.end(), row.name) == only.end()) continue;
        std::string slug;
        for (char c : row.name) slug += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
        RunDir sub(dir.root / "rows" / slug);
        out << "== " << row.name << "\n";
        try {
            const auto r = train_into(row.config, "all", "", sub, out);
            std::string dice;
            if (with_seg) {
                auto g = load_generator(sub.checkpoints() / "final");
                const auto dataset = build_dataset(row.config.data);
                const auto n_real = materialize_split(dataset, Split::TestSynthesis).size();
                const auto data = segmentation_data(dataset, g, pool_size(row.config, n_real), row.config.seg_grid.mix_seed);
                const auto cells = run_experiment({{MixSpec{MixMode::Add, 0.4, "ctsynth", row.config.seg_grid.mix_seed}},
                                                   row.config.seg, row.config.eval.folds},
                                                  data);
                const auto &c = cells.front();
                if (c.error.empty()) {
                    const auto &m = c.metrics.at("infection_dice");
                    dice = num(100.0 * m.mean) + "±" + num(100.0 * m.ci95);
                }
            }
            csv << row.name << "," << num(r.after.fid) << "," << num(r.after.psnr) << "," << num(r.after.ssim) << ","
                << num(r.after.rmse) << "," << dice << ",ok\n";
        } catch (const NumericalError &e) {
            csv << row.name << ",,,,,,numerical: " << e.what() << "\n";
        } catch (const std::exception &e) {
            csv << row.name << ",,,,,,\"error: " << e.what() << "\"\n";
        }
        csv.flush();
    }
    return kExitOk;
}

}  // namespace

std::vector<AblationRow> ablation_rows(const RunConfig &base) {
    std::vector<AblationRow> rows;
    auto add = [&](std::string name, auto edit) {
        RunConfig c = base;
        edit(c);
        c.validate();
        rows.push_back({std::move(name), std::move(c)});
    };
    add("ours", [](RunConfig &) {});
    add("w/o DESUM", [](RunConfig &c) { c.train.generator.use_desum = false; });
    add("using F_global", [](RunConfig &c) { c.train.generator.alpha_input = AlphaInput::GlobalOnly; });
    add("fixed alpha=0.5", [](RunConfig &c) { c.train.generator.fixed_alpha = 0.5; });
    add("w/o DFM", [](RunConfig &c) { c.train.discriminator.use_dfm = false; });
    add("using D2^i", [](RunConfig &c) { c.train.discriminator.beta_source = BetaSource::D2; });
    add("fixed beta=0.5", [](RunConfig &c) { c.train.discriminator.fixed_beta = 0.5; });
    add("D=1", [](RunConfig &c) { c.train.discriminator.n_discriminators = 1; });
    add("D=3", [](RunConfig &c) { c.train.discriminator.n_discriminators = 3; });
    add("G=1", [](RunConfig &c) { c.train.generator.n_generators = 1; });
    add("G=3", [](RunConfig &c) { c.train.generator.n_generators = 3; });
    return rows;
}

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"Segmentation-map conditioned CT image synthesis", "ctsynth"};
    app.require_subcommand(1);

    std::string config, stage = "all", resume, checkpoint, manifest, kind = "composite", extractor = "random:64:2020";
    std::vector<std::string> sets, only;
    std::string out_dir, pred, ref, masks, report = "report.csv";
    int folds = 10;
    bool with_seg = false;

    auto add_config = [&](CLI::App *sub, bool required) {
        auto *opt = sub->add_option("--config", config, "run config (TOML)")->check(CLI::ExistingFile);
        if (required) opt->required();
        sub->add_option("--set", sets, "override a config field, section.key=value")->allow_extra_args(false);
    };

    auto *phantom = app.add_subcommand("phantom", "generate a phantom dataset");
    add_config(phantom, false);
    phantom->add_option("--out", out_dir, "output directory")->required();

    auto *train = app.add_subcommand("train", "run the staged training schedule");
    add_config(train, false);
    train->add_option("--stage", stage, "1, 2, 3 or all")->check(CLI::IsMember({"1", "2", "3", "all"}));
    train->add_option("--resume", resume, "checkpoint directory to continue from")->check(CLI::ExistingDirectory);
    train->add_option("--out", out_dir, "output directory")->required();

    auto *synth = app.add_subcommand("synthesize", "render and composite images for a manifest");
    synth->add_option("--checkpoint", checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
    synth->add_option("--manifest", manifest, "pair manifest")->required()->check(CLI::ExistingFile);
    synth->add_option("--out", out_dir, "output directory")->required();

    auto *eval = app.add_subcommand("evaluate", "image-quality metrics with fold confidence intervals");
    eval->add_option("--pred", pred, "directory of synthesized PNGs")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--ref", ref, "directory of reference PNGs")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--masks", masks, "directory of label-map PNGs")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--folds", folds, "fold count")->check(CLI::PositiveNumber);
    eval->add_option("--kind", kind, "composite or lung")->check(CLI::IsMember({"composite", "lung"}));
    eval->add_option("--extractor", extractor, "FID embedding: random[:dim[:seed]] or torchscript:PATH");
    eval->add_option("--out", report, "report CSV path");

    auto *seg = app.add_subcommand("seg-exp", "mixed real/synthetic segmentation experiments");
    add_config(seg, false);
    seg->add_option("--checkpoint", checkpoint, "trained synthesizer (trained from the config when absent)")
        ->check(CLI::ExistingDirectory);
    seg->add_option("--out", out_dir, "output directory")->required();

    auto *ablate = app.add_subcommand("ablate", "train and score the ablation variants");
    add_config(ablate, false);
    ablate->add_option("--out", out_dir, "output directory")->required();
    ablate->add_option("--rows", only, "restrict to these rows");
    ablate->add_flag("--seg", with_seg, "also run the add-40% segmentation experiment per row");

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp &e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp &e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError &e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (phantom->parsed()) return cmd_phantom(config, sets, out_dir, out);
        if (train->parsed()) return cmd_train(config, sets, stage, resume, out_dir, out);
        if (synth->parsed()) return cmd_synthesize(checkpoint, manifest, out_dir, out, err);
        if (eval->parsed()) return cmd_evaluate(pred, ref, masks, folds, kind, extractor, report, out);
        if (seg->parsed()) return cmd_seg_exp(config, sets, checkpoint, out_dir, out);
        if (ablate->parsed()) return cmd_ablate(config, sets, out_dir, with_seg, only, out);
    } catch (const ConfigError &e) {
        err << "config error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericalError &e) {
        err << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

int run_cli(int argc, char **argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace ctsynth
