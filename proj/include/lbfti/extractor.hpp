#ifndef LBFTI_EXTRACTOR_HPP_
#define LBFTI_EXTRACTOR_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lbfti/core/rng.hpp"
#include "lbfti/core/tensor.hpp"
#include "lbfti/domain.hpp"
#include "lbfti/errors.hpp"
#include "lbfti/io/checkpoint.hpp"
#include "lbfti/nn/layers.hpp"

namespace lbfti {

/// Capability description of a template extractor E: X -> T.
struct ExtractorDescriptor {
    std::string name;
    int d = 512;
    bool normalized = true;     // unit-norm outputs
    bool differentiable = false;
    enum class Role { target, unseen } role = Role::target;
    int input_size = 128;

    void validate() const {
        if (d < 8) throw ConfigError("extractor dimension must be >= 8, got " + std::to_string(d));
    }
};

/// Query tier: images in, templates out, nothing else. Thread-safe.
class TemplateExtractor {
public:
    virtual ~TemplateExtractor() = default;
    virtual const ExtractorDescriptor& descriptor() const = 0;
    virtual FacialTemplate extract(const FaceImage& image) const = 0;
};

/// Training tier: adds a tensor-level gradient path through the network.
/// forward/backward carry per-pass state, so each training loop owns its
/// instance exclusively while differentiating.
class DifferentiableExtractor : public TemplateExtractor {
public:
    virtual Tensor forward(const Tensor& chw) = 0;
    virtual Tensor backward(const Tensor& dtemplate) = 0;
};

/// Cosine similarity in [-1, 1].
inline double similarity(const FacialTemplate& a, const FacialTemplate& b) {
    if (a.d() != b.d())
        throw DimensionError("similarity: template dims " + std::to_string(a.d()) + " vs " +
                             std::to_string(b.d()));
    const double na = a.values.norm2(), nb = b.values.norm2();
    if (na < 1e-12 || nb < 1e-12) throw NumericError("similarity: zero-norm template");
    double dot = 0.0;
    for (int i = 0; i < a.d(); ++i)
        dot += static_cast<double>(a.values[i]) * b.values[i];
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

inline FacialTemplate extract(const TemplateExtractor& e, const FaceImage& image) {
    return e.extract(image);
}

inline Tensor extract_differentiable(TemplateExtractor& e, const Tensor& chw) {
    if (!e.descriptor().differentiable)
        throw CapabilityError("extractor '" + e.descriptor().name +
                              "' is query-only; no gradient path available");
    return dynamic_cast<DifferentiableExtractor&>(e).forward(chw);
}

// ---------------------------------------------------------------------------
// Toy extractor: strided conv encoder -> global pool -> linear -> L2 norm.
// Desk-scale stand-in for a production face recognition backbone.
// ---------------------------------------------------------------------------

struct ToyExtractorConfig {
    int d = 512;
    int width = 16;       // channels of the first conv
    int input_size = 128;
    uint64_t seed = 1;
    // training
    int epochs = 12;
    int batch_size = 32;
    float lr = 1e-3f;
    float margin = 0.2f;    // additive cosine margin on the target class
    float logit_scale = 16.0f;
};

inline int toy_extractor_blocks(int input_size) {
    int n = 0, s = input_size;
    while (s > 8 && n < 4) {
        s /= 2;
        ++n;
    }
    return std::max(n, 2);
}

class ToyExtractor final : public DifferentiableExtractor {
public:
    explicit ToyExtractor(const ToyExtractorConfig& cfg, ExtractorDescriptor::Role role =
                                                             ExtractorDescriptor::Role::target)
        : cfg_(cfg) {
        desc_.name = "toy-" + std::to_string(cfg.seed);
        desc_.d = cfg.d;
        desc_.normalized = true;
        desc_.differentiable = true;
        desc_.role = role;
        desc_.input_size = cfg.input_size;
        desc_.validate();

        Rng rng = Rng(cfg.seed).fork("toy_extractor");
        const int nb = toy_extractor_blocks(cfg.input_size);
        int in_ch = 3;
        for (int b = 0; b < nb; ++b) {
            const int out_ch = std::min(cfg.width << b, 128);
            const std::string nm = "extractor.block" + std::to_string(b);
            convs_.emplace_back(std::make_unique<nn::Conv2d>(nm + ".conv", in_ch, out_ch, 3, 2, 1, rng));
            bns_.emplace_back(std::make_unique<nn::BatchNorm2d>(nm + ".bn", out_ch));
            relus_.emplace_back();
            in_ch = out_ch;
        }
        fc_ = std::make_unique<nn::Linear>("extractor.fc", in_ch, cfg.d, rng, 1.0);
        initialized_ = true;
    }

    const ExtractorDescriptor& descriptor() const override { return desc_; }
    const ToyExtractorConfig& config() const { return cfg_; }

    /// Deterministic inference-mode extraction. Concurrent calls are
    /// serialized internally (the layer caches are per-pass scratch).
    FacialTemplate extract(const FaceImage& image) const override {
        if (!initialized_) throw StateError("extractor not initialized");
        std::lock_guard<std::mutex> lock(mu_);
        auto* self = const_cast<ToyExtractor*>(this);
        return FacialTemplate(self->run_forward(image.pixels, false));
    }

    /// Training-tier forward; keeps activations for backward.
    Tensor forward(const Tensor& chw) override { return run_forward(chw, false); }

    Tensor backward(const Tensor& dtemplate) override {
        Tensor g = l2_.backward(dtemplate);
        g = fc_->backward(g);
        g = gap_.backward(g);
        for (int b = static_cast<int>(convs_.size()) - 1; b >= 0; --b) {
            g = relus_[static_cast<size_t>(b)].backward(g);
            g = bns_[static_cast<size_t>(b)]->backward(g);
            g = convs_[static_cast<size_t>(b)]->backward(g);
        }
        return g;
    }

    /// Embedding before normalization plus the normalized template; used by
    /// the training head. `training` drives batch-norm statistics.
    Tensor forward_train(const Tensor& chw) { return run_forward(chw, true); }

    std::vector<nn::Param*> params() {
        std::vector<nn::Param*> ps;
        for (auto& c : convs_) c->collect(ps);
        for (auto& b : bns_) b->collect(ps);
        fc_->collect(ps);
        return ps;
    }

    void zero_grad() {
        for (nn::Param* p : params()) p->zero_grad();
    }

    void save(const std::string& path) {
        nlohmann::json manifest = {{"kind", "toy_extractor"},
                                   {"d", cfg_.d},
                                   {"width", cfg_.width},
                                   {"input_size", cfg_.input_size},
                                   {"seed", cfg_.seed},
                                   {"name", desc_.name}};
        auto ps = params();
        io::save_checkpoint(path, manifest, ps);
    }

    static std::unique_ptr<ToyExtractor> load(const std::string& path,
                                              ExtractorDescriptor::Role role) {
        nlohmann::json m = io::load_checkpoint_manifest(path);
        if (m.value("kind", "") != "toy_extractor")
            throw FormatError("not a toy extractor checkpoint: " + path);
        ToyExtractorConfig cfg;
        cfg.d = m.at("d").get<int>();
        cfg.width = m.at("width").get<int>();
        cfg.input_size = m.at("input_size").get<int>();
        cfg.seed = m.at("seed").get<uint64_t>();
        auto e = std::make_unique<ToyExtractor>(cfg, role);
        auto ps = e->params();
        io::load_checkpoint(path, ps);
        return e;
    }

private:
    Tensor run_forward(const Tensor& chw, bool training) {
        if (chw.rank() != 3 || chw.dim(0) != 3)
            throw DimensionError("extractor input must be {3,H,W}, got " + chw.shape_str());
        Tensor h = chw;
        for (size_t b = 0; b < convs_.size(); ++b) {
            h = convs_[b]->forward(h);
            h = bns_[b]->forward(h, training);
            h = relus_[b].forward(h);
        }
        h = gap_.forward(h);
        h = fc_->forward(h);
        return l2_.forward(h);
    }

    ToyExtractorConfig cfg_;
    ExtractorDescriptor desc_;
    bool initialized_ = false;
    std::vector<std::unique_ptr<nn::Conv2d>> convs_;
    std::vector<std::unique_ptr<nn::BatchNorm2d>> bns_;
    std::vector<nn::ReLU> relus_;
    nn::GlobalAvgPool gap_;
    std::unique_ptr<nn::Linear> fc_;
    nn::L2Normalize l2_;
    mutable std::mutex mu_;
};

/// Demotes a differentiable extractor to the query-only tier. The value path
/// is untouched; only the capability flag changes.
class QueryOnlyExtractor final : public TemplateExtractor {
public:
    explicit QueryOnlyExtractor(std::shared_ptr<TemplateExtractor> inner)
        : inner_(std::move(inner)), desc_(inner_->descriptor()) {
        desc_.differentiable = false;
    }
    const ExtractorDescriptor& descriptor() const override { return desc_; }
    FacialTemplate extract(const FaceImage& image) const override { return inner_->extract(image); }

private:
    std::shared_ptr<TemplateExtractor> inner_;
    ExtractorDescriptor desc_;
};

// ---------------------------------------------------------------------------
// Toy extractor training: margin-based classification on synthetic identities
// ---------------------------------------------------------------------------

struct LabeledImage {
    Tensor chw;
    int label = 0;
    std::string subject_id;
};

inline std::unique_ptr<ToyExtractor> train_toy_extractor(const std::vector<LabeledImage>& data,
                                                         const ToyExtractorConfig& cfg) {
    std::map<int, int> per_label;
    for (const LabeledImage& im : data) per_label[im.label]++;
    int usable = 0;
    for (auto& [l, n] : per_label)
        if (n >= 2) ++usable;
    if (per_label.size() < 2 || usable < 2)
        throw DataError("toy extractor training needs >= 2 identities with >= 2 images each");

    const int n_ids = static_cast<int>(per_label.size());
    auto ex = std::make_unique<ToyExtractor>(cfg);

    // classification head, dropped after training
    Rng rng = Rng(cfg.seed).fork("extractor_head");
    nn::Param head("head.w", {n_ids, cfg.d});
    for (int64_t i = 0; i < head.value.size(); ++i)
        head.value[i] = static_cast<float>(rng.normal(0.0, 0.05));

    std::vector<nn::Param*> ps = ex->params();
    ps.push_back(&head);
    nn::Adam opt(cfg.lr);
    opt.attach(ps);

    Rng order_rng = Rng(cfg.seed).fork("extractor_order");
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with our own stream
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[order_rng.uniform_int(i)]);
        size_t cursor = 0;
        while (cursor < order.size()) {
            const size_t take = std::min<size_t>(cfg.batch_size, order.size() - cursor);
            for (nn::Param* p : ps) p->zero_grad();
            for (size_t k = 0; k < take; ++k) {
                const LabeledImage& im = data[order[cursor + k]];
                Tensor z = ex->forward_train(im.chw);  // unit-norm embedding

                // cosine logits with additive margin on the target class
                std::vector<double> logits(static_cast<size_t>(n_ids));
                std::vector<double> row_norm(static_cast<size_t>(n_ids));
                double max_logit = -1e30;
                for (int j = 0; j < n_ids; ++j) {
                    const float* wj = head.value.data() + static_cast<int64_t>(j) * cfg.d;
                    double nw = 0.0, dot = 0.0;
                    for (int i = 0; i < cfg.d; ++i) {
                        nw += static_cast<double>(wj[i]) * wj[i];
                        dot += static_cast<double>(wj[i]) * z[i];
                    }
                    nw = std::sqrt(std::max(nw, 1e-12));
                    row_norm[static_cast<size_t>(j)] = nw;
                    double cosj = dot / nw;
                    if (j == im.label) cosj -= cfg.margin;
                    logits[static_cast<size_t>(j)] = cfg.logit_scale * cosj;
                    max_logit = std::max(max_logit, logits[static_cast<size_t>(j)]);
                }
                double denom = 0.0;
                for (int j = 0; j < n_ids; ++j) denom += std::exp(logits[static_cast<size_t>(j)] - max_logit);

                // softmax CE backward -> dz and dW
                Tensor dz({cfg.d});
                for (int j = 0; j < n_ids; ++j) {
                    const double pj = std::exp(logits[static_cast<size_t>(j)] - max_logit) / denom;
                    const double dlogit = pj - (j == im.label ? 1.0 : 0.0);
                    const float* wj = head.value.data() + static_cast<int64_t>(j) * cfg.d;
                    float* gj = head.grad.data() + static_cast<int64_t>(j) * cfg.d;
                    const double nw = row_norm[static_cast<size_t>(j)];
                    double dot = 0.0;
                    for (int i = 0; i < cfg.d; ++i) dot += static_cast<double>(wj[i]) * z[i];
                    const double coef = cfg.logit_scale * dlogit;
                    for (int i = 0; i < cfg.d; ++i) {
                        // d cos / dw = z/|w| - w (w.z)/|w|^3 ; d cos / dz = w/|w|
                        gj[i] += static_cast<float>(coef * (z[i] / nw - wj[i] * dot / (nw * nw * nw)));
                        dz[i] += static_cast<float>(coef * wj[i] / nw);
                    }
                }
                ex->backward(dz);
            }
            for (nn::Param* p : ps)
                if (!p->is_state) p->grad.scale_(1.0f / static_cast<float>(take));
            opt.step();
            cursor += take;
        }
    }
    return ex;
}

// ---------------------------------------------------------------------------
// Name-resolved extractor factories (config plug-in point)
// ---------------------------------------------------------------------------

class ExtractorRegistry {
public:
    using Factory = std::function<std::shared_ptr<TemplateExtractor>(
        const nlohmann::json& spec, ExtractorDescriptor::Role role)>;

    static ExtractorRegistry& instance() {
        static ExtractorRegistry reg;
        return reg;
    }

    void add(const std::string& kind, Factory f) { factories_[kind] = std::move(f); }

    bool has(const std::string& kind) const { return factories_.count(kind) > 0; }

    std::shared_ptr<TemplateExtractor> make(const nlohmann::json& spec,
                                            ExtractorDescriptor::Role role) const {
        const std::string kind = spec.value("kind", "");
        auto it = factories_.find(kind);
        if (it == factories_.end()) return nullptr;
        return it->second(spec, role);
    }

private:
    ExtractorRegistry() {
        add("toy", [](const nlohmann::json& spec, ExtractorDescriptor::Role role)
                -> std::shared_ptr<TemplateExtractor> {
            if (spec.contains("checkpoint"))
                return ToyExtractor::load(spec.at("checkpoint").get<std::string>(), role);
            ToyExtractorConfig cfg;
            cfg.seed = spec.value("seed", 1ull);
            cfg.d = spec.value("d", 512);
            cfg.width = spec.value("width", 16);
            cfg.input_size = spec.value("input_size", 128);
            return std::make_shared<ToyExtractor>(cfg, role);
        });
    }

    std::map<std::string, Factory> factories_;
};

}  // namespace lbfti

#endif  // LBFTI_EXTRACTOR_HPP_
