#ifndef LBFTI_EXPERIMENT_HPP_
#define LBFTI_EXPERIMENT_HPP_

#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lbfti/config.hpp"
#include "lbfti/evaluation.hpp"
#include "lbfti/extractor.hpp"
#include "lbfti/io/image_io.hpp"
#include "lbfti/io/records.hpp"
#include "lbfti/masks.hpp"
#include "lbfti/training.hpp"

namespace lbfti {

// Dataset assembly and experiment orchestration behind the CLI commands.

inline void set_compute_threads(int n) {
    if (n > 0) Eigen::setNbThreads(n);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOptions {
    int n_subjects = 64;
    int images_per_subject = 8;
    int resolution = 128;
    uint64_t seed = 1;
    int test_subjects = 8;  // trailing subjects assigned to the test split
};

/// Writes images, mask and landmark sidecars, and the manifest. Deterministic
/// per seed: identity seeds are seed*100000 + subject index.
inline std::string synth_dataset(const std::string& out_dir, const SynthOptions& opts) {
    if (opts.n_subjects <= 0 || opts.images_per_subject <= 0)
        throw UsageError("synth requires positive subject and image counts");
    if (opts.test_subjects < 0 || opts.test_subjects >= opts.n_subjects)
        throw UsageError("test_subjects must be in [0, n_subjects)");
    std::filesystem::create_directories(out_dir);

    io::DatasetManifest manifest;
    for (int s = 0; s < opts.n_subjects; ++s) {
        const uint64_t identity = opts.seed * 100000ull + static_cast<uint64_t>(s);
        const bool is_test = s >= opts.n_subjects - opts.test_subjects;
        for (int k = 0; k < opts.images_per_subject; ++k) {
            SyntheticFace face =
                generate_synthetic_face({identity, static_cast<uint64_t>(k)}, opts.resolution);
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%02d.ppm", face.subject_id.c_str(), k);
            const std::string img_path = (std::filesystem::path(out_dir) / name).string();
            io::write_ppm(img_path, face.image);
            io::write_mask_pgm(io::mask_sidecar_path(img_path), face.bundle.masks);
            io::save_landmarks_json(io::landmark_sidecar_path(img_path), face.landmarks);
            manifest.entries.push_back({img_path, face.subject_id, is_test ? "test" : "train"});
        }
    }
    const std::string mpath = (std::filesystem::path(out_dir) / "manifest.jsonl").string();
    io::save_manifest(mpath, manifest);
    return mpath;
}

// ---------------------------------------------------------------------------
// dataset loading
// ---------------------------------------------------------------------------

/// Masks come from the sidecar PGM when present, else from a landmark
/// sidecar; otherwise every mask is a detection failure.
inline MaskSet load_item_masks(const std::string& image_path, int h, int w) {
    const std::string mpath = io::mask_sidecar_path(image_path);
    if (std::filesystem::exists(mpath)) return io::read_mask_pgm(mpath);
    const std::string lpath = io::landmark_sidecar_path(image_path);
    if (std::filesystem::exists(lpath))
        return masks_from_landmarks(io::load_landmarks_json(lpath), h, w);
    MaskSet failed;
    for (Component c : kComponents) {
        ComponentMask m(c, h, w);
        m.detection_failure = true;
        failed.emplace(c, std::move(m));
    }
    return failed;
}

inline std::vector<TrainItem> load_train_items(const io::DatasetManifest& manifest,
                                               const TemplateExtractor& extractor) {
    std::vector<TrainItem> items;
    for (const auto& e : manifest.split("train")) {
        TrainItem item;
        item.image = io::read_ppm(e.image_path);
        item.masks = load_item_masks(e.image_path, item.image.height(), item.image.width());
        item.tmpl = extractor.extract(item.image);
        item.subject_id = e.subject_id;
        items.push_back(std::move(item));
    }
    if (items.empty()) throw DataError("manifest has no train entries");
    return items;
}

inline std::vector<EvalItem> load_eval_items(const io::DatasetManifest& manifest,
                                             const std::string& split = "test") {
    std::vector<EvalItem> items;
    for (const auto& e : manifest.split(split)) {
        EvalItem item;
        item.image = io::read_ppm(e.image_path);
        item.masks = load_item_masks(e.image_path, item.image.height(), item.image.width());
        item.subject_id = e.subject_id;
        items.push_back(std::move(item));
    }
    if (items.empty()) throw DataError("manifest has no " + split + " entries");
    return items;
}

// ---------------------------------------------------------------------------
// extractor preparation
// ---------------------------------------------------------------------------

/// Resolves the configured target extractor: loads its checkpoint when given,
/// otherwise trains a toy extractor on the manifest's train split and saves
/// it under the run directory.
inline std::shared_ptr<ToyExtractor> prepare_toy_extractor(const nlohmann::json& spec,
                                                           const io::DatasetManifest& manifest,
                                                           int resolution,
                                                           const std::string& save_path) {
    if (spec.value("kind", "") != "toy")
        throw ConfigError("training requires a toy extractor (adapters are evaluation-only)");
    if (spec.contains("checkpoint")) {
        std::shared_ptr<ToyExtractor> e =
            ToyExtractor::load(spec.at("checkpoint").get<std::string>(),
                               ExtractorDescriptor::Role::target);
        if (e->descriptor().input_size != resolution)
            throw ConfigError("extractor checkpoint resolution " +
                              std::to_string(e->descriptor().input_size) +
                              " does not match config resolution " + std::to_string(resolution));
        return e;
    }
    ToyExtractorConfig cfg;
    cfg.d = spec.value("d", 512);
    cfg.width = spec.value("width", 16);
    cfg.input_size = resolution;
    cfg.seed = spec.value("seed", 7ull);
    cfg.epochs = spec.value("train_epochs", 12);

    std::map<std::string, int> labels;
    std::vector<LabeledImage> data;
    for (const auto& e : manifest.split("train")) {
        auto [it, inserted] = labels.emplace(e.subject_id, static_cast<int>(labels.size()));
        FaceImage img = io::read_ppm(e.image_path);
        data.push_back({img.pixels, it->second, e.subject_id});
    }
    std::shared_ptr<ToyExtractor> e = train_toy_extractor(data, cfg);
    if (!save_path.empty()) e->save(save_path);
    return e;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct RunArtifacts {
    std::string run_dir;
    std::string extractor_ckpt;
    std::vector<std::string> stage_ckpts;
    TrainState state;
};

/// Executes the configured stages, writing the config snapshot, per-epoch
/// metric records and stage-boundary checkpoints into the run directory.
/// `resume_stage` > 1 reloads the previous stage's checkpoint and re-enters
/// the pipeline there.
inline RunArtifacts run_experiment(const ExperimentConfig& cfg, int resume_stage = 1,
                                   std::ostream* log = nullptr) {
    set_compute_threads(cfg.threads);
    const std::string run_dir = cfg.out_dir;
    std::filesystem::create_directories(run_dir);
    {
        std::ofstream snap(std::filesystem::path(run_dir) / "config.json");
        snap << cfg.raw_text;  // verbatim snapshot
    }
    io::DatasetManifest manifest = io::load_manifest(cfg.manifest_path);

    RunArtifacts art;
    art.run_dir = run_dir;
    art.extractor_ckpt = (std::filesystem::path(run_dir) / "extractor.ckpt").string();
    std::shared_ptr<ToyExtractor> extractor;
    if (resume_stage > 1 && std::filesystem::exists(art.extractor_ckpt)) {
        extractor = ToyExtractor::load(art.extractor_ckpt, ExtractorDescriptor::Role::target);
    } else {
        extractor =
            prepare_toy_extractor(cfg.target_extractor, manifest, cfg.resolution, art.extractor_ckpt);
    }

    std::vector<TrainItem> items = load_train_items(manifest, *extractor);
    FixtureFeatureNetwork fnet(cfg.seed + 1);
    FixtureAttributeClassifier attr(cfg.seed + 2);
    TrainContext ctx;
    ctx.extractor = extractor.get();
    ctx.fnet = &fnet;
    ctx.attr = &attr;

    TrainingConfig tcfg = cfg.training();

    std::ofstream metrics(std::filesystem::path(run_dir) / "metrics.jsonl", std::ios::app);
    TrainState::EpochHook hook = [&](const TrainState& st, int stage, int epoch) {
        metrics << st.history.back().to_json().dump() << "\n";
        metrics.flush();
        if (log) *log << "stage " << stage << " epoch " << epoch << " done\n";
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "stage%d_epoch%04d.ckpt", stage, epoch + 1);
            const_cast<TrainState&>(st).gens.save(
                (std::filesystem::path(run_dir) / name).string());
        }
    };

    TrainState st;
    if (resume_stage <= 1) {
        st = make_train_state(tcfg);
        st.gens.inject_template = tcfg.ablation.ft_s2;
    } else {
        char prev[32];
        std::snprintf(prev, sizeof(prev), "stage%d.ckpt", resume_stage - 1);
        const std::string prev_path = (std::filesystem::path(run_dir) / prev).string();
        if (!std::filesystem::exists(prev_path))
            throw StateError("resume requested but " + prev_path + " does not exist");
        st.gens = GeneratorSet::load(prev_path);
        st.completed_stage = st.gens.stage_tag;
        st.seed = cfg.seed;
    }

    auto save_stage = [&](int stage) {
        char name[32];
        std::snprintf(name, sizeof(name), "stage%d.ckpt", stage);
        const std::string path = (std::filesystem::path(run_dir) / name).string();
        st.gens.save(path);
        art.stage_ckpts.push_back(path);
    };

    const AblationFlags& a = tcfg.ablation;
    if ((a.f_s1 || a.m_s1) && resume_stage <= 1) {
        run_stage1(st, items, tcfg, ctx, hook);
        save_stage(1);
    }
    if (a.s2 && resume_stage <= 2) {
        run_stage2(st, items, tcfg, ctx, hook);
        save_stage(2);
    }
    if (a.s3 && resume_stage <= 3) {
        run_stage3(st, items, tcfg, ctx, hook);
        save_stage(3);
    }
    art.state = std::move(st);
    return art;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalRun {
    std::map<std::string, EvalReport> reports;  // keyed by extractor name
    std::vector<std::string> skipped;           // unresolvable adapters

    nlohmann::json to_json() const {
        nlohmann::json reps = nlohmann::json::object();
        for (const auto& [name, r] : reports) reps[name] = r.to_json();
        return {{"reports", reps}, {"skipped", skipped}};
    }

    static EvalRun from_json(const nlohmann::json& j) {
        EvalRun run;
        for (auto it = j.at("reports").begin(); it != j.at("reports").end(); ++it)
            run.reports[it.key()] = EvalReport::from_json(it.value());
        run.skipped = j.value("skipped", std::vector<std::string>{});
        return run;
    }
};

/// Scores a trained inverter on the manifest's test split against the target
/// extractor and every configured unseen extractor. Unknown adapter kinds are
/// reported as skipped rather than failing the run.
inline EvalRun evaluate_checkpoint(const ExperimentConfig& cfg, GeneratorSet& gens,
                                   const TemplateExtractor& target,
                                   const std::vector<EvalItem>& items) {
    if (gens.cfg.d != target.descriptor().d)
        throw DimensionError("checkpoint d=" + std::to_string(gens.cfg.d) +
                             " vs extractor d=" + std::to_string(target.descriptor().d));
    std::vector<FaceImage> recon;
    recon.reserve(items.size());
    for (const EvalItem& item : items) recon.push_back(gens.invert(target.extract(item.image)));

    FixtureFeatureNetwork metric_fnet(cfg.seed + 1);
    EvalRun run;
    run.reports[target.descriptor().name] =
        evaluate_reconstructions(recon, items, target, metric_fnet, cfg.eval);

    for (const nlohmann::json& spec : cfg.unseen_extractors) {
        std::shared_ptr<TemplateExtractor> unseen =
            ExtractorRegistry::instance().make(spec, ExtractorDescriptor::Role::unseen);
        if (!unseen) {
            run.skipped.push_back(spec.value("name", spec.value("kind", "unknown")));
            continue;
        }
        run.reports[unseen->descriptor().name] =
            evaluate_reconstructions(recon, items, *unseen, metric_fnet, cfg.eval);
    }
    return run;
}

/// Pair list export for external scoring: genuine/impostor image path pairs
/// for the test split (reconstructions are referenced by their output paths).
inline std::vector<io::PairRecord> export_pair_list(const std::vector<EvalItem>& items,
                                                    const std::vector<std::string>& recon_paths,
                                                    const std::vector<std::string>& item_paths,
                                                    Protocol proto, const PairingOptions& opts) {
    std::vector<FacialTemplate> dummy_r, dummy_o;
    std::vector<std::string> subjects;
    Tensor unit({8});
    unit[0] = 1.0f;
    for (const EvalItem& it : items) {
        dummy_r.push_back(FacialTemplate(unit));
        dummy_o.push_back(FacialTemplate(unit));
        subjects.push_back(it.subject_id);
    }
    VerificationScoreSet s = build_protocol_pairs(dummy_r, dummy_o, subjects, proto, opts);
    std::vector<io::PairRecord> out;
    auto decode = [&](const ScoredPair& p, const char* label) {
        // pair ids are "t1:i", "t2:i:j", "imp:i:k"
        const std::string& id = p.pair_id;
        const size_t c1 = id.find(':');
        const size_t c2 = id.find(':', c1 + 1);
        const size_t i = std::stoul(id.substr(c1 + 1, c2 == std::string::npos ? std::string::npos
                                                                              : c2 - c1 - 1));
        const size_t j = c2 == std::string::npos ? i : std::stoul(id.substr(c2 + 1));
        out.push_back({id, recon_paths.at(i), item_paths.at(j), label});
    };
    for (const auto& p : s.genuine) decode(p, "genuine");
    for (const auto& p : s.impostor) decode(p, "impostor");
    return out;
}

// ---------------------------------------------------------------------------
// ablate: the six-row study
// ---------------------------------------------------------------------------

struct AblationRowResult {
    int row = 0;
    AblationFlags flags;
    EvalReport report;
};

inline std::vector<AblationRowResult> run_all_ablations(const ExperimentConfig& cfg,
                                                        std::ostream* log = nullptr) {
    set_compute_threads(cfg.threads);
    io::DatasetManifest manifest = io::load_manifest(cfg.manifest_path);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string ex_path = (std::filesystem::path(cfg.out_dir) / "extractor.ckpt").string();
    std::shared_ptr<ToyExtractor> extractor =
        prepare_toy_extractor(cfg.target_extractor, manifest, cfg.resolution, ex_path);
    std::vector<TrainItem> items = load_train_items(manifest, *extractor);
    std::vector<EvalItem> eval_items = load_eval_items(manifest);
    FixtureFeatureNetwork fnet(cfg.seed + 1);
    FixtureAttributeClassifier attr(cfg.seed + 2);
    TrainContext ctx;
    ctx.extractor = extractor.get();
    ctx.fnet = &fnet;
    ctx.attr = &attr;

    std::vector<AblationRowResult> rows;
    for (int r = 1; r <= 6; ++r) {
        TrainingConfig tcfg = cfg.training();
        tcfg.ablation = AblationFlags::row(r);
        if (log) *log << "ablation row " << r << "...\n";
        auto [st, report] =
            run_ablation(tcfg, items, eval_items, ctx, *extractor, fnet, cfg.eval);
        char name[32];
        std::snprintf(name, sizeof(name), "row%d.ckpt", r);
        st.gens.save((std::filesystem::path(cfg.out_dir) / name).string());
        rows.push_back({r, tcfg.ablation, std::move(report)});
    }
    return rows;
}

}  // namespace lbfti

#endif  // LBFTI_EXPERIMENT_HPP_
