#ifndef LBFTI_TRAINING_HPP_
#define LBFTI_TRAINING_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lbfti/core/rng.hpp"
#include "lbfti/domain.hpp"
#include "lbfti/errors.hpp"
#include "lbfti/evaluation.hpp"
#include "lbfti/extractor.hpp"
#include "lbfti/generators.hpp"
#include "lbfti/losses.hpp"
#include "lbfti/masks.hpp"

namespace lbfti {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Pipeline switches mirroring the ablation table: foreground / midground
/// stage-1 training, stage-2 panorama training, secondary template injection,
/// and stage-3 joint fine-tuning. Only the six studied rows are accepted.
struct AblationFlags {
    bool f_s1 = true;
    bool m_s1 = true;
    bool s2 = true;
    bool ft_s2 = true;
    bool s3 = true;

    static AblationFlags row(int r) {
        switch (r) {
            case 1: return {false, false, true, true, false};
            case 2: return {true, false, true, true, true};
            case 3: return {true, true, false, false, false};
            case 4: return {true, true, true, false, true};
            case 5: return {true, true, true, true, false};
            case 6: return {true, true, true, true, true};
        }
        throw ConfigError("ablation row must be 1..6");
    }

    int row_index() const {
        for (int r = 1; r <= 6; ++r) {
            const AblationFlags f = row(r);
            if (f.f_s1 == f_s1 && f.m_s1 == m_s1 && f.s2 == s2 && f.ft_s2 == ft_s2 && f.s3 == s3)
                return r;
        }
        return -1;
    }

    void validate() const {
        if (row_index() < 0)
            throw ConfigError("unsupported ablation flag combination (not a studied row)");
    }

    nlohmann::json to_json() const {
        return {{"F-S1", f_s1}, {"M-S1", m_s1}, {"S2", s2}, {"FT-S2", ft_s2}, {"S3", s3}};
    }
    static AblationFlags from_json(const nlohmann::json& j) {
        AblationFlags f;
        f.f_s1 = j.value("F-S1", true);
        f.m_s1 = j.value("M-S1", true);
        f.s2 = j.value("S2", true);
        f.ft_s2 = j.value("FT-S2", true);
        f.s3 = j.value("S3", true);
        return f;
    }
};

/// Per-stage hyperparameters. Reference defaults follow the training recipe:
/// stages 1 and 2 run 100 epochs at lr 2e-4, stage 3 runs 20 epochs at lr
/// 1e-4, batch size 32 throughout.
struct StageConfig {
    int stage = 1;
    int epochs = 100;
    float learning_rate = 2e-4f;
    int batch_size = 32;
    LossWeights loss_weights;

    static StageConfig defaults(int stage) {
        StageConfig c;
        c.stage = stage;
        if (stage == 1 || stage == 2) {
            c.epochs = 100;
            c.learning_rate = 2e-4f;
        } else if (stage == 3) {
            c.epochs = 20;
            c.learning_rate = 1e-4f;
        } else {
            throw ConfigError("stage must be 1..3");
        }
        return c;
    }

    void validate() const {
        if (stage < 1 || stage > 3) throw ConfigError("stage must be 1..3");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (!(learning_rate > 0.0f)) throw ConfigError("learning rate must be > 0");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        loss_weights.validate();
    }

    nlohmann::json to_json() const {
        return {{"epochs", epochs},
                {"learning_rate", learning_rate},
                {"batch_size", batch_size},
                {"w_tmp", loss_weights.w_tmp},
                {"w_pix", loss_weights.w_pix},
                {"w_per", loss_weights.w_per},
                {"w_att", loss_weights.w_att}};
    }
    static StageConfig from_json(int stage, const nlohmann::json& j) {
        StageConfig c = defaults(stage);
        c.epochs = j.value("epochs", c.epochs);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.loss_weights.w_tmp = j.value("w_tmp", 1.0f);
        c.loss_weights.w_pix = j.value("w_pix", 1.0f);
        c.loss_weights.w_per = j.value("w_per", 1.0f);
        c.loss_weights.w_att = j.value("w_att", 1.0f);
        return c;
    }
};

struct TrainingConfig {
    GeneratorConfig generator;
    StageConfig stage1 = StageConfig::defaults(1);
    StageConfig stage2 = StageConfig::defaults(2);
    StageConfig stage3 = StageConfig::defaults(3);
    AblationFlags ablation;
    bool stage1_template_loss = true;
    bool stage1_template_masked = true;
    bool normalize_templates = true;
    uint64_t seed = 1;

    void validate() const {
        stage1.validate();
        stage2.validate();
        stage3.validate();
        ablation.validate();
    }
};

/// One training example: aligned face, its ground-truth masks and the
/// template extracted by the attacker's training extractor. Layer targets
/// are rebuilt from (image, mask) on demand.
struct TrainItem {
    FaceImage image;
    MaskSet masks;
    FacialTemplate tmpl;
    std::string subject_id;

    FaceImage layer_target(Component c) const { return apply_mask(image, masks.at(c)); }
};

/// Frozen loss-side networks used across all stages.
struct TrainContext {
    DifferentiableExtractor* extractor = nullptr;
    FeatureNetwork* fnet = nullptr;
    AttributeClassifier* attr = nullptr;

    void require(bool need_attr) const {
        if (extractor == nullptr || fnet == nullptr)
            throw ArityError("training requires an extractor and a feature network");
        if (need_attr && attr == nullptr)
            throw ArityError("stage 2 requires an attribute classifier");
    }
};

// ---------------------------------------------------------------------------
// Train state
// ---------------------------------------------------------------------------

struct EpochRecord {
    int stage = 0;
    int epoch = 0;  // within the stage
    // per generator: mean unweighted terms and the mean weighted total
    std::map<std::string, double> mean_total;
    std::map<std::string, double> mean_tmp, mean_pix, mean_per, mean_att;

    nlohmann::json to_json() const {
        return {{"stage", stage},       {"epoch", epoch},   {"total", mean_total},
                {"tmp", mean_tmp},      {"pix", mean_pix},  {"per", mean_per},
                {"att", mean_att}};
    }
};

struct TrainState {
    GeneratorSet gens;
    int completed_stage = 0;  // transitions only 0 -> 1 -> 2 -> 3
    uint64_t seed = 1;
    std::vector<EpochRecord> history;

    using EpochHook = std::function<void(const TrainState&, int stage, int epoch)>;
};

inline TrainState make_train_state(const TrainingConfig& cfg) {
    cfg.validate();
    const AblationFlags& a = cfg.ablation;
    // row 1 removes FG/MG and the panorama encoder; row 3 removes the
    // panorama generator; row 2 removes only the midground generator.
    const bool with_layers = a.f_s1;
    const bool with_mid = a.m_s1;
    const bool with_pano = a.s2;
    TrainState st;
    st.gens = GeneratorSet::build(cfg.generator, with_mid, with_pano, with_layers);
    st.seed = cfg.seed;
    return st;
}

// ---------------------------------------------------------------------------
// Internals shared by the stages
// ---------------------------------------------------------------------------

namespace train_detail {

inline std::vector<size_t> epoch_order(size_t n, Rng& rng) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
    return order;
}

struct TermAccum {
    double total = 0.0, tmp = 0.0, pix = 0.0, per = 0.0, att = 0.0;
    int64_t n = 0;
    void add(const ObjectiveResult& r) {
        total += r.total;
        tmp += r.tmp;
        pix += r.pix;
        per += r.per;
        att += r.att;
        ++n;
    }
};

inline void finalize_epoch(EpochRecord& rec, const std::string& name, const TermAccum& acc) {
    const double n = acc.n > 0 ? static_cast<double>(acc.n) : 1.0;
    rec.mean_total[name] = acc.total / n;
    rec.mean_tmp[name] = acc.tmp / n;
    rec.mean_pix[name] = acc.pix / n;
    rec.mean_per[name] = acc.per / n;
    rec.mean_att[name] = acc.att / n;
}

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Stage 1: independent layer-generator training
// ---------------------------------------------------------------------------

/// Trains every present layer generator independently (no shared gradients)
/// with the stage-1 objective against its masked layer target.
inline void run_stage1(TrainState& st, const std::vector<TrainItem>& data,
                       const TrainingConfig& cfg, const TrainContext& ctx,
                       const TrainState::EpochHook& hook = {}) {
    cfg.validate();
    ctx.require(false);
    if (data.empty()) throw DataError("stage 1: empty dataset");
    if (st.gens.layer_gens.empty())
        throw StateError("stage 1: no layer generators in this configuration");
    if (st.completed_stage != 0) throw StateError("stage transitions must follow 1 -> 2 -> 3");

    const StageConfig& sc = cfg.stage1;
    StageObjectiveConfig ocfg;
    ocfg.stage = 1;
    ocfg.panorama_role = false;
    ocfg.weights = sc.loss_weights;
    ocfg.stage1_template_loss = cfg.stage1_template_loss;
    ocfg.stage1_template_masked = cfg.stage1_template_masked;
    ocfg.normalize_templates = cfg.normalize_templates;

    std::map<Component, nn::Adam> opts;
    for (auto& [c, g] : st.gens.layer_gens) {
        g->set_trainable(true);
        opts[c] = nn::Adam(sc.learning_rate);
        opts[c].attach(g->params());
    }

    Rng shuffle_rng = Rng(cfg.seed).fork("stage1_order");
    for (int epoch = 0; epoch < sc.epochs; ++epoch) {
        EpochRecord rec;
        rec.stage = 1;
        rec.epoch = epoch;
        std::map<Component, train_detail::TermAccum> accum;
        const std::vector<size_t> order = train_detail::epoch_order(data.size(), shuffle_rng);
        size_t cursor = 0;
        while (cursor < order.size()) {
            const size_t take = std::min<size_t>(sc.batch_size, order.size() - cursor);
            for (auto& [c, g] : st.gens.layer_gens) g->zero_grad();
            for (size_t k = 0; k < take; ++k) {
                const TrainItem& item = data[order[cursor + k]];
                for (auto& [c, g] : st.gens.layer_gens) {
                    Tensor out = g->forward(item.tmpl.values, true);
                    const FaceImage target = item.layer_target(c);
                    ObjectiveParts parts;
                    parts.generated = &out;
                    parts.target = &target.pixels;
                    parts.target_template = &item.tmpl;
                    parts.extractor = ctx.extractor;
                    parts.fnet = ctx.fnet;
                    parts.mask = &item.masks.at(c);
                    ObjectiveResult r = stage_objective(ocfg, parts);
                    accum[c].add(r);
                    g->backward(r.grad);
                }
            }
            const float inv = 1.0f / static_cast<float>(take);
            for (auto& [c, g] : st.gens.layer_gens) {
                for (nn::Param* p : g->params())
                    if (!p->is_state) p->grad.scale_(inv);
                opts[c].step();
            }
            cursor += take;
        }
        for (auto& [c, g] : st.gens.layer_gens)
            train_detail::finalize_epoch(rec, g->name(), accum[c]);
        st.history.push_back(rec);
        if (hook) hook(st, 1, epoch);
    }
    st.completed_stage = 1;
    st.gens.stage_tag = 1;
}

// ---------------------------------------------------------------------------
// Stage 2: freeze stage-1 generators, train the panorama generator
// ---------------------------------------------------------------------------

inline void run_stage2(TrainState& st, const std::vector<TrainItem>& data,
                       const TrainingConfig& cfg, const TrainContext& ctx,
                       const TrainState::EpochHook& hook = {}) {
    cfg.validate();
    ctx.require(true);
    if (data.empty()) throw DataError("stage 2: empty dataset");
    if (!st.gens.has_panorama || !st.gens.pano)
        throw StateError("stage 2: panorama generator is ablated away");
    const bool skipped_stage1 = st.gens.layer_gens.empty();
    if (!skipped_stage1 && st.completed_stage != 1)
        throw StateError("stage 2 requires a completed stage 1");

    const StageConfig& sc = cfg.stage2;
    StageObjectiveConfig ocfg;
    ocfg.stage = 2;
    ocfg.panorama_role = true;
    ocfg.weights = sc.loss_weights;
    ocfg.normalize_templates = cfg.normalize_templates;

    // freeze: parameters and running statistics alike
    for (auto& [c, g] : st.gens.layer_gens) g->set_trainable(false);
    PanoramaGenerator& pg = *st.gens.pano;
    pg.set_trainable(true);
    nn::Adam opt(sc.learning_rate);
    opt.attach(pg.params());

    const std::vector<Component> inputs = st.gens.input_components();
    const bool inject = cfg.ablation.ft_s2;

    Rng shuffle_rng = Rng(cfg.seed).fork("stage2_order");
    for (int epoch = 0; epoch < sc.epochs; ++epoch) {
        EpochRecord rec;
        rec.stage = 2;
        rec.epoch = epoch;
        train_detail::TermAccum accum;
        const std::vector<size_t> order = train_detail::epoch_order(data.size(), shuffle_rng);
        size_t cursor = 0;
        while (cursor < order.size()) {
            const size_t take = std::min<size_t>(sc.batch_size, order.size() - cursor);
            pg.zero_grad();
            for (size_t k = 0; k < take; ++k) {
                const TrainItem& item = data[order[cursor + k]];
                std::vector<Tensor> layers;
                for (Component c : inputs)
                    layers.push_back(st.gens.layer_gens.at(c)->forward(item.tmpl.values, false));
                Tensor out = pg.forward(layers, item.tmpl.values, true, inject);
                ObjectiveParts parts;
                parts.generated = &out;
                parts.target = &item.image.pixels;
                parts.target_template = &item.tmpl;
                parts.extractor = ctx.extractor;
                parts.fnet = ctx.fnet;
                parts.attr = ctx.attr;
                ObjectiveResult r = stage_objective(ocfg, parts);
                accum.add(r);
                pg.backward(r.grad);
            }
            const float inv = 1.0f / static_cast<float>(take);
            for (nn::Param* p : pg.params())
                if (!p->is_state) p->grad.scale_(inv);
            opt.step();
            cursor += take;
        }
        train_detail::finalize_epoch(rec, pg.name(), accum);
        st.history.push_back(rec);
        if (hook) hook(st, 2, epoch);
    }
    st.completed_stage = 2;
    st.gens.stage_tag = 2;
}

// ---------------------------------------------------------------------------
// Stage 3: end-to-end joint fine-tuning
// ---------------------------------------------------------------------------

/// Unfreezes everything. Each generator keeps the loss configuration of its
/// own training stage; the panorama objective also backpropagates through the
/// layer generators (that is the end-to-end part).
inline void run_stage3(TrainState& st, const std::vector<TrainItem>& data,
                       const TrainingConfig& cfg, const TrainContext& ctx,
                       const TrainState::EpochHook& hook = {}) {
    cfg.validate();
    ctx.require(true);
    if (data.empty()) throw DataError("stage 3: empty dataset");
    if (st.completed_stage != 2) throw StateError("stage 3 requires a completed stage 2");
    if (!st.gens.pano) throw StateError("stage 3: panorama generator is ablated away");

    const StageConfig& sc = cfg.stage3;
    StageObjectiveConfig layer_cfg;
    layer_cfg.stage = 3;
    layer_cfg.panorama_role = false;
    layer_cfg.weights = cfg.stage1.loss_weights;
    layer_cfg.stage1_template_loss = cfg.stage1_template_loss;
    layer_cfg.stage1_template_masked = cfg.stage1_template_masked;
    layer_cfg.normalize_templates = cfg.normalize_templates;
    StageObjectiveConfig pano_cfg;
    pano_cfg.stage = 3;
    pano_cfg.panorama_role = true;
    pano_cfg.weights = cfg.stage2.loss_weights;
    pano_cfg.normalize_templates = cfg.normalize_templates;

    PanoramaGenerator& pg = *st.gens.pano;
    pg.set_trainable(true);
    std::map<Component, nn::Adam> opts;
    for (auto& [c, g] : st.gens.layer_gens) {
        g->set_trainable(true);
        opts[c] = nn::Adam(sc.learning_rate);
        opts[c].attach(g->params());
    }
    nn::Adam pano_opt(sc.learning_rate);
    pano_opt.attach(pg.params());

    const std::vector<Component> inputs = st.gens.input_components();
    const bool inject = cfg.ablation.ft_s2;

    Rng shuffle_rng = Rng(cfg.seed).fork("stage3_order");
    for (int epoch = 0; epoch < sc.epochs; ++epoch) {
        EpochRecord rec;
        rec.stage = 3;
        rec.epoch = epoch;
        std::map<std::string, train_detail::TermAccum> accum;
        const std::vector<size_t> order = train_detail::epoch_order(data.size(), shuffle_rng);
        size_t cursor = 0;
        while (cursor < order.size()) {
            const size_t take = std::min<size_t>(sc.batch_size, order.size() - cursor);
            for (auto& [c, g] : st.gens.layer_gens) g->zero_grad();
            pg.zero_grad();
            for (size_t k = 0; k < take; ++k) {
                const TrainItem& item = data[order[cursor + k]];
                std::vector<Tensor> layers;
                for (Component c : inputs)
                    layers.push_back(st.gens.layer_gens.at(c)->forward(item.tmpl.values, true));
                Tensor out = pg.forward(layers, item.tmpl.values, true, inject);

                ObjectiveParts pano_parts;
                pano_parts.generated = &out;
                pano_parts.target = &item.image.pixels;
                pano_parts.target_template = &item.tmpl;
                pano_parts.extractor = ctx.extractor;
                pano_parts.fnet = ctx.fnet;
                pano_parts.attr = ctx.attr;
                ObjectiveResult pr = stage_objective(pano_cfg, pano_parts);
                accum[pg.name()].add(pr);
                std::vector<Tensor> dlayers = pg.backward(pr.grad);

                // own stage-1 losses, then one backward per layer generator
                // with the summed output gradient
                for (size_t li = 0; li < inputs.size(); ++li) {
                    const Component c = inputs[li];
                    LayerGenerator& g = *st.gens.layer_gens.at(c);
                    const FaceImage target = item.layer_target(c);
                    ObjectiveParts parts;
                    parts.generated = &layers[li];
                    parts.target = &target.pixels;
                    parts.target_template = &item.tmpl;
                    parts.extractor = ctx.extractor;
                    parts.fnet = ctx.fnet;
                    parts.mask = &item.masks.at(c);
                    ObjectiveResult lr = stage_objective(layer_cfg, parts);
                    accum[g.name()].add(lr);
                    Tensor total_grad = lr.grad;
                    if (!dlayers.empty()) total_grad.add_(dlayers[li]);
                    g.backward(total_grad);
                }
            }
            const float inv = 1.0f / static_cast<float>(take);
            for (auto& [c, g] : st.gens.layer_gens) {
                for (nn::Param* p : g->params())
                    if (!p->is_state) p->grad.scale_(inv);
                opts[c].step();
            }
            for (nn::Param* p : pg.params())
                if (!p->is_state) p->grad.scale_(inv);
            pano_opt.step();
            cursor += take;
        }
        for (auto& [name, acc] : accum) train_detail::finalize_epoch(rec, name, acc);
        st.history.push_back(rec);
        if (hook) hook(st, 3, epoch);
    }
    st.completed_stage = 3;
    st.gens.stage_tag = 3;
}

// ---------------------------------------------------------------------------
// Full pipeline and ablation rows
// ---------------------------------------------------------------------------

/// Runs the stages selected by the ablation flags.
inline TrainState run_pipeline(const TrainingConfig& cfg, const std::vector<TrainItem>& data,
                               const TrainContext& ctx, const TrainState::EpochHook& hook = {}) {
    cfg.validate();
    TrainState st = make_train_state(cfg);
    st.gens.inject_template = cfg.ablation.ft_s2;
    const AblationFlags& a = cfg.ablation;
    if (a.f_s1 || a.m_s1) run_stage1(st, data, cfg, ctx, hook);
    if (a.s2) run_stage2(st, data, cfg, ctx, hook);
    if (a.s3) run_stage3(st, data, cfg, ctx, hook);
    return st;
}

/// Trains one ablation row and evaluates it on the toy benchmark, producing
/// the same metric columns as the ablation study table.
inline std::pair<TrainState, EvalReport> run_ablation(const TrainingConfig& cfg,
                                                      const std::vector<TrainItem>& train_data,
                                                      const std::vector<EvalItem>& eval_items,
                                                      const TrainContext& ctx,
                                                      const TemplateExtractor& target_extractor,
                                                      FeatureNetwork& metric_fnet,
                                                      const EvalOptions& opts = {}) {
    cfg.ablation.validate();
    TrainState st = run_pipeline(cfg, train_data, ctx);
    std::vector<FaceImage> recon;
    recon.reserve(eval_items.size());
    for (const EvalItem& item : eval_items) {
        const FacialTemplate t = target_extractor.extract(item.image);
        recon.push_back(st.gens.invert(t));
    }
    EvalReport report =
        evaluate_reconstructions(recon, eval_items, target_extractor, metric_fnet, opts);
    return {std::move(st), std::move(report)};
}

/// FNV-1a over the raw bytes of every parameter (running statistics
/// included); the freeze tests compare these across a stage.
inline uint64_t parameter_checksum(nn::Module& m) {
    uint64_t h = 1469598103934665603ull;
    std::vector<nn::Param*> ps;
    m.collect(ps);
    for (const nn::Param* p : ps) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
        const size_t nbytes = static_cast<size_t>(p->value.size()) * sizeof(float);
        for (size_t i = 0; i < nbytes; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace lbfti

#endif  // LBFTI_TRAINING_HPP_
