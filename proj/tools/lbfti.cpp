// lbfti: layered facial-template-inversion laboratory.
//
// Subcommands: synth, train, invert, eval, ablate, report.
// Exit codes: 0 success, 1 runtime failure, 2 config/usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "lbfti/config.hpp"
#include "lbfti/experiment.hpp"
#include "lbfti/extractor.hpp"
#include "lbfti/generators.hpp"
#include "lbfti/io/image_io.hpp"
#include "lbfti/io/records.hpp"

namespace fs = std::filesystem;
using namespace lbfti;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out;
    int64_t seed = -1;
    int resolution = 0;
    bool deterministic = false;
};

ExperimentConfig load_config_with_overrides(const CommonFlags& f) {
    if (f.config_path.empty()) throw UsageError("--config is required");
    ExperimentConfig cfg = load_experiment_config(f.config_path);
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (f.seed >= 0) cfg.seed = static_cast<uint64_t>(f.seed);
    if (f.resolution > 0) {
        cfg.resolution = f.resolution;
        if (!cfg.generator_overridden) cfg.generator = GeneratorConfig::toy(f.resolution);
        cfg.generator.resolution = f.resolution;
    }
    if (f.deterministic) cfg.threads = 1;
    return cfg;
}

void print_report_table(const EvalRun& run) {
    std::cout << std::left << std::setw(18) << "extractor" << std::setw(14) << "TypeI@1%"
              << std::setw(14) << "TypeII@1%" << std::setw(14) << "TypeI@0.1%" << std::setw(14)
              << "TypeII@0.1%" << std::setw(10) << "FAPD" << std::setw(10) << "FAPC" << "\n";
    for (const auto& [name, r] : run.reports) {
        auto tar = [&](Protocol p, double far) {
            auto it = r.tar_at.find(EvalReport::key(p, far));
            return it == r.tar_at.end() ? -1.0 : it->second;
        };
        std::cout << std::left << std::setw(18) << name << std::fixed << std::setprecision(4)
                  << std::setw(14) << tar(Protocol::type1, 0.01) << std::setw(14)
                  << tar(Protocol::type2, 0.01) << std::setw(14) << tar(Protocol::type1, 0.001)
                  << std::setw(14) << tar(Protocol::type2, 0.001) << std::setw(10) << r.fapd_mean
                  << std::setw(10) << r.fapc_mean << "\n";
    }
    for (const auto& s : run.skipped) std::cout << "skipped (no adapter): " << s << "\n";
}

int cmd_synth(const CommonFlags& flags, const SynthOptions& opts) {
    if (flags.out.empty()) throw UsageError("synth requires --out");
    const std::string manifest = synth_dataset(flags.out, opts);
    std::cout << "wrote " << manifest << "\n";
    return 0;
}

int cmd_train(const CommonFlags& flags, int resume_stage) {
    ExperimentConfig cfg = load_config_with_overrides(flags);
    if (cfg.manifest_path.empty()) throw UsageError("config must set 'manifest'");
    RunArtifacts art = run_experiment(cfg, resume_stage, &std::cout);
    std::cout << "run dir: " << art.run_dir << "\n";
    for (const auto& c : art.stage_ckpts) std::cout << "checkpoint: " << c << "\n";
    return 0;
}

int cmd_invert(const std::string& checkpoint, const std::string& templates_file,
               const std::string& images_manifest, const std::string& extractor_ckpt,
               const std::string& out_dir, bool grid, bool deterministic) {
    if (deterministic) set_compute_threads(1);
    GeneratorSet gens = GeneratorSet::load(checkpoint);
    fs::create_directories(out_dir);

    std::vector<io::TemplateRecord> records;
    std::vector<FaceImage> originals;
    if (!templates_file.empty()) {
        records = io::load_templates(templates_file);
    } else if (!images_manifest.empty()) {
        if (extractor_ckpt.empty())
            throw UsageError("invert --images requires --extractor <checkpoint>");
        auto extractor = ToyExtractor::load(extractor_ckpt, ExtractorDescriptor::Role::target);
        io::DatasetManifest manifest = io::load_manifest(images_manifest);
        for (const auto& e : manifest.entries) {
            FaceImage img = io::read_ppm(e.image_path);
            originals.push_back(img);
            records.push_back({fs::path(e.image_path).stem().string(), extractor->extract(img)});
        }
    } else {
        throw UsageError("invert requires --templates or --images");
    }

    std::vector<FaceImage> recons;
    for (const auto& rec : records) {
        if (rec.tmpl.d() != gens.cfg.d)
            throw DimensionError("template '" + rec.id + "' has d=" + std::to_string(rec.tmpl.d()) +
                                 ", checkpoint expects " + std::to_string(gens.cfg.d));
        FaceImage img = gens.invert(rec.tmpl);
        recons.push_back(img);
        io::write_ppm((fs::path(out_dir) / ("recon_" + rec.id + ".ppm")).string(), img);
    }
    std::cout << "wrote " << recons.size() << " reconstructions to " << out_dir << "\n";
    if (grid && !originals.empty()) {
        const std::string sheet = (fs::path(out_dir) / "grid.ppm").string();
        io::write_grid_sheet(sheet, originals, recons);
        std::cout << "wrote " << sheet << "\n";
    }
    return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint,
             const std::string& manifest_override, const std::string& extractor_ckpt,
             const std::string& report_out, const std::string& export_pairs) {
    ExperimentConfig cfg = load_config_with_overrides(flags);
    set_compute_threads(cfg.threads);
    const std::string manifest_path =
        manifest_override.empty() ? cfg.manifest_path : manifest_override;
    if (manifest_path.empty()) throw UsageError("eval needs a manifest (config or --manifest)");

    GeneratorSet gens = GeneratorSet::load(checkpoint);
    io::DatasetManifest manifest = io::load_manifest(manifest_path);
    std::vector<EvalItem> items = load_eval_items(manifest);

    std::shared_ptr<TemplateExtractor> target;
    if (!extractor_ckpt.empty()) {
        target = ToyExtractor::load(extractor_ckpt, ExtractorDescriptor::Role::target);
    } else {
        target = ExtractorRegistry::instance().make(cfg.target_extractor,
                                                    ExtractorDescriptor::Role::target);
        if (!target) throw ConfigError("cannot resolve the target extractor from config");
    }

    EvalRun run = evaluate_checkpoint(cfg, gens, *target, items);
    print_report_table(run);
    if (!report_out.empty()) {
        std::ofstream os(report_out);
        os << run.to_json().dump(2) << "\n";
        std::cout << "report: " << report_out << "\n";
    }
    if (!export_pairs.empty()) {
        std::vector<std::string> item_paths, recon_paths;
        for (const auto& e : manifest.split("test")) {
            item_paths.push_back(e.image_path);
            recon_paths.push_back("recon_" + fs::path(e.image_path).stem().string() + ".ppm");
        }
        std::vector<io::PairRecord> pairs;
        for (Protocol p : {Protocol::type1, Protocol::type2}) {
            auto batch = export_pair_list(items, recon_paths, item_paths, p, cfg.eval.pairing);
            pairs.insert(pairs.end(), batch.begin(), batch.end());
        }
        io::save_pairs(export_pairs, pairs);
        std::cout << "pair list: " << export_pairs << "\n";
    }
    return 0;
}

int cmd_ablate(const CommonFlags& flags) {
    ExperimentConfig cfg = load_config_with_overrides(flags);
    if (cfg.manifest_path.empty()) throw UsageError("config must set 'manifest'");
    std::vector<AblationRowResult> rows = run_all_ablations(cfg, &std::cout);

    nlohmann::json table = nlohmann::json::array();
    std::cout << std::left << std::setw(5) << "row" << std::setw(30) << "flags" << std::setw(12)
              << "TypeII@1%" << std::setw(14) << "TypeII@0.1%" << std::setw(10) << "FAPD"
              << std::setw(10) << "FAPC" << "\n";
    for (const auto& r : rows) {
        const auto t2a = r.report.tar_at.at(EvalReport::key(Protocol::type2, 0.01));
        const auto t2b = r.report.tar_at.at(EvalReport::key(Protocol::type2, 0.001));
        std::cout << std::left << std::setw(5) << r.row << std::setw(30) << r.flags.to_json().dump()
                  << std::fixed << std::setprecision(4) << std::setw(12) << t2a << std::setw(14)
                  << t2b << std::setw(10) << r.report.fapd_mean << std::setw(10)
                  << r.report.fapc_mean << "\n";
        table.push_back({{"row", r.row}, {"flags", r.flags.to_json()}, {"report", r.report.to_json()}});
    }
    std::ofstream os(fs::path(cfg.out_dir) / "ablation.json");
    os << table.dump(2) << "\n";
    std::cout << "table: " << (fs::path(cfg.out_dir) / "ablation.json").string() << "\n";
    return 0;
}

int cmd_report(const std::string& report_path) {
    std::ifstream is(report_path);
    if (!is) throw IoError("cannot read report: " + report_path);
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded()) throw FormatError("report is not valid JSON: " + report_path);
    print_report_table(EvalRun::from_json(j));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layered facial-template-inversion laboratory"};
    app.require_subcommand(1);

    CommonFlags flags;
    SynthOptions synth_opts;
    int resume_stage = 1;
    std::string checkpoint, templates_file, images_manifest, extractor_ckpt;
    std::string manifest_override, report_out, export_pairs, report_path;
    bool grid = false;

    auto add_common = [&](CLI::App* cmd, bool with_config) {
        if (with_config) cmd->add_option("--config", flags.config_path, "experiment config (JSON)");
        cmd->add_option("--out", flags.out, "output directory");
        cmd->add_option("--seed", flags.seed, "seed override");
        cmd->add_option("--resolution", flags.resolution, "resolution override");
        cmd->add_flag("--deterministic", flags.deterministic, "single-threaded deterministic mode");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic face dataset");
    add_common(synth, false);
    synth->add_option("--subjects", synth_opts.n_subjects, "number of identities");
    synth->add_option("--images-per-subject", synth_opts.images_per_subject, "images per identity");
    synth->add_option("--test-subjects", synth_opts.test_subjects,
                      "trailing identities in the test split");

    CLI::App* train = app.add_subcommand("train", "run the three-stage training pipeline");
    add_common(train, true);
    train->add_option("--stage", resume_stage, "resume point: run stages >= N")
        ->check(CLI::Range(1, 3));

    CLI::App* invert = app.add_subcommand("invert", "reconstruct faces from templates");
    invert->add_option("--checkpoint", checkpoint, "generator checkpoint")->required();
    invert->add_option("--templates", templates_file, "templates file (JSONL, base64 f32)");
    invert->add_option("--images", images_manifest, "manifest of images to invert");
    invert->add_option("--extractor", extractor_ckpt, "extractor checkpoint (with --images)");
    invert->add_option("--out", flags.out, "output directory")->required();
    invert->add_flag("--grid", grid, "write an (original, reconstruction) grid sheet");
    invert->add_flag("--deterministic", flags.deterministic, "single-threaded deterministic mode");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval, true);
    eval->add_option("--checkpoint", checkpoint, "generator checkpoint")->required();
    eval->add_option("--manifest", manifest_override, "manifest override");
    eval->add_option("--extractor", extractor_ckpt, "target extractor checkpoint");
    eval->add_option("--report", report_out, "write the report JSON here");
    eval->add_option("--export-pairs", export_pairs, "write the pair list here");

    CLI::App* ablate = app.add_subcommand("ablate", "run all six ablation rows");
    add_common(ablate, true);

    CLI::App* report = app.add_subcommand("report", "pretty-print a report file");
    report->add_option("--report", report_path, "report JSON")->required();

    try {
        app.parse(argc, argv);
        if (flags.deterministic) set_compute_threads(1);
        if (synth->parsed()) {
            if (flags.seed >= 0) synth_opts.seed = static_cast<uint64_t>(flags.seed);
            if (flags.resolution > 0) synth_opts.resolution = flags.resolution;
            return cmd_synth(flags, synth_opts);
        }
        if (train->parsed()) return cmd_train(flags, resume_stage);
        if (invert->parsed())
            return cmd_invert(checkpoint, templates_file, images_manifest, extractor_ckpt,
                              flags.out, grid, flags.deterministic);
        if (eval->parsed())
            return cmd_eval(flags, checkpoint, manifest_override, extractor_ckpt, report_out,
                            export_pairs);
        if (ablate->parsed()) return cmd_ablate(flags);
        if (report->parsed()) return cmd_report(report_path);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
