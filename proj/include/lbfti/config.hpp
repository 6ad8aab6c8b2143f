#ifndef LBFTI_CONFIG_HPP_
#define LBFTI_CONFIG_HPP_

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lbfti/errors.hpp"
#include "lbfti/evaluation.hpp"
#include "lbfti/generators.hpp"
#include "lbfti/training.hpp"

namespace lbfti {

/// Experiment configuration: JSON with a strict schema. Unknown keys are
/// rejected, naming the first offender; the CLI maps that to exit code 2.
struct ExperimentConfig {
    uint64_t seed = 1;
    int resolution = 128;
    std::string out_dir = "runs/exp";
    std::string manifest_path;
    nlohmann::json target_extractor = {{"kind", "toy"}, {"seed", 7}};
    std::vector<nlohmann::json> unseen_extractors;
    GeneratorConfig generator = GeneratorConfig::toy();
    bool generator_overridden = false;
    StageConfig stage1 = StageConfig::defaults(1);
    StageConfig stage2 = StageConfig::defaults(2);
    StageConfig stage3 = StageConfig::defaults(3);
    AblationFlags ablation;
    bool stage1_template_loss = true;
    bool stage1_template_masked = true;
    bool normalize_templates = true;
    EvalOptions eval;
    int threads = 0;          // 0 = library default
    int checkpoint_every = 0; // extra checkpoints every N epochs; 0 = stage ends only
    std::string raw_text;     // verbatim file bytes, snapshotted into run dirs

    TrainingConfig training() const {
        TrainingConfig t;
        t.generator = generator;
        t.generator.resolution = resolution;
        t.generator.seed = seed;
        t.stage1 = stage1;
        t.stage2 = stage2;
        t.stage3 = stage3;
        t.ablation = ablation;
        t.stage1_template_loss = stage1_template_loss;
        t.stage1_template_masked = stage1_template_masked;
        t.normalize_templates = normalize_templates;
        t.seed = seed;
        return t;
    }
};

namespace config_detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                           const std::string& scope) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + (scope.empty() ? it.key() : scope + "." + it.key()) +
                              "'");
}

inline void check_extractor_spec(const nlohmann::json& j, const std::string& scope) {
    if (!j.is_object()) throw ConfigError(scope + " must be an object");
    reject_unknown(j, {"kind", "seed", "d", "width", "input_size", "checkpoint", "train_epochs",
                       "name"},
                   scope);
    if (!j.contains("kind")) throw ConfigError(scope + ".kind is required");
}

}  // namespace config_detail

inline ExperimentConfig parse_experiment_config(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON");
    if (!j.is_object()) throw ConfigError("config must be a JSON object");

    using config_detail::check_extractor_spec;
    using config_detail::reject_unknown;
    reject_unknown(j, {"seed", "resolution", "out_dir", "manifest", "extractor",
                       "unseen_extractors", "generator", "stage1", "stage2", "stage3", "ablation",
                       "losses", "eval", "threads", "checkpoint_every"},
                   "");

    ExperimentConfig c;
    c.raw_text = text;
    c.seed = j.value("seed", 1ull);
    c.resolution = j.value("resolution", 128);
    c.out_dir = j.value("out_dir", std::string("runs/exp"));
    c.manifest_path = j.value("manifest", std::string());
    if (j.contains("extractor")) {
        check_extractor_spec(j["extractor"], "extractor");
        c.target_extractor = j["extractor"];
    }
    if (j.contains("unseen_extractors")) {
        if (!j["unseen_extractors"].is_array())
            throw ConfigError("unseen_extractors must be an array");
        int idx = 0;
        for (const auto& e : j["unseen_extractors"]) {
            check_extractor_spec(e, "unseen_extractors[" + std::to_string(idx) + "]");
            c.unseen_extractors.push_back(e);
            ++idx;
        }
    }
    c.generator = GeneratorConfig::toy(c.resolution);
    if (j.contains("generator")) {
        const nlohmann::json& g = j["generator"];
        reject_unknown(g, {"preset", "d", "fore_c0", "fore_min", "enc_base", "enc_cap",
                           "template_map_ch", "fusion_ch", "dec_min"},
                       "generator");
        const std::string preset = g.value("preset", std::string("toy"));
        if (preset == "reference") {
            c.generator = GeneratorConfig::reference();
            c.generator.resolution = c.resolution;
        } else if (preset != "toy") {
            throw ConfigError("generator.preset must be 'toy' or 'reference'");
        }
        c.generator.d = g.value("d", c.generator.d);
        c.generator.fore_c0 = g.value("fore_c0", c.generator.fore_c0);
        c.generator.fore_min = g.value("fore_min", c.generator.fore_min);
        c.generator.enc_base = g.value("enc_base", c.generator.enc_base);
        c.generator.enc_cap = g.value("enc_cap", c.generator.enc_cap);
        c.generator.template_map_ch = g.value("template_map_ch", c.generator.template_map_ch);
        c.generator.fusion_ch = g.value("fusion_ch", c.generator.fusion_ch);
        c.generator.dec_min = g.value("dec_min", c.generator.dec_min);
        c.generator_overridden = true;
    }
    const std::set<std::string> stage_keys = {"epochs", "learning_rate", "batch_size",
                                              "w_tmp",  "w_pix",         "w_per",
                                              "w_att"};
    if (j.contains("stage1")) {
        reject_unknown(j["stage1"], stage_keys, "stage1");
        c.stage1 = StageConfig::from_json(1, j["stage1"]);
    }
    if (j.contains("stage2")) {
        reject_unknown(j["stage2"], stage_keys, "stage2");
        c.stage2 = StageConfig::from_json(2, j["stage2"]);
    }
    if (j.contains("stage3")) {
        reject_unknown(j["stage3"], stage_keys, "stage3");
        c.stage3 = StageConfig::from_json(3, j["stage3"]);
    }
    if (j.contains("ablation")) {
        reject_unknown(j["ablation"], {"F-S1", "M-S1", "S2", "FT-S2", "S3", "row"}, "ablation");
        if (j["ablation"].contains("row")) {
            c.ablation = AblationFlags::row(j["ablation"]["row"].get<int>());
        } else {
            c.ablation = AblationFlags::from_json(j["ablation"]);
        }
    }
    if (j.contains("losses")) {
        reject_unknown(j["losses"],
                       {"stage1_template_loss", "stage1_template_masked", "normalize_templates"},
                       "losses");
        c.stage1_template_loss = j["losses"].value("stage1_template_loss", true);
        c.stage1_template_masked = j["losses"].value("stage1_template_masked", true);
        c.normalize_templates = j["losses"].value("normalize_templates", true);
    }
    if (j.contains("eval")) {
        reject_unknown(j["eval"], {"fars", "impostor_factor", "pair_seed"}, "eval");
        if (j["eval"].contains("fars"))
            c.eval.fars = j["eval"]["fars"].get<std::vector<double>>();
        c.eval.pairing.impostor_factor = j["eval"].value("impostor_factor", 10);
        c.eval.pairing.seed = j["eval"].value("pair_seed", 97ull);
    }
    c.threads = j.value("threads", 0);
    c.checkpoint_every = j.value("checkpoint_every", 0);

    c.training().validate();
    for (double far : c.eval.fars)
        if (!(far > 0.0 && far < 1.0)) throw ConfigError("eval.fars entries must be in (0,1)");
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file: " + path);
    std::string text(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>{});
    return parse_experiment_config(text);
}

}  // namespace lbfti

#endif  // LBFTI_CONFIG_HPP_
