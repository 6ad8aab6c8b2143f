#ifndef LBFTI_LOSSES_HPP_
#define LBFTI_LOSSES_HPP_

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lbfti/core/rng.hpp"
#include "lbfti/core/tensor.hpp"
#include "lbfti/domain.hpp"
#include "lbfti/errors.hpp"
#include "lbfti/extractor.hpp"
#include "lbfti/nn/layers.hpp"

namespace lbfti {

// ---------------------------------------------------------------------------
// Pluggable networks behind the perceptual and attribute losses
// ---------------------------------------------------------------------------

/// Named feature taps mirroring the ReLU1_2..ReLU5_3 pyramid of a pretrained
/// visual network: taps ordered by decreasing spatial size, deterministic in
/// inference mode. Implementations cache one in-flight pass for backward.
class FeatureNetwork {
public:
    virtual ~FeatureNetwork() = default;
    virtual std::string name() const = 0;
    virtual int n_taps() const = 0;
    virtual std::vector<Tensor> taps(const Tensor& chw) = 0;
    virtual Tensor taps_backward(const std::vector<Tensor>& dtaps) = 0;
};

/// Single tap, phi(x) = x. Reduces the perceptual loss to the pixel loss.
class IdentityFeatureNetwork final : public FeatureNetwork {
public:
    std::string name() const override { return "identity"; }
    int n_taps() const override { return 1; }
    std::vector<Tensor> taps(const Tensor& chw) override { return {chw}; }
    Tensor taps_backward(const std::vector<Tensor>& dtaps) override { return dtaps.at(0); }
};

/// Taps phi_k(x) = scale_k * x; exercises the per-layer normalization.
class ScaledTapsNetwork final : public FeatureNetwork {
public:
    explicit ScaledTapsNetwork(std::vector<float> scales) : scales_(std::move(scales)) {}
    std::string name() const override { return "scaled"; }
    int n_taps() const override { return static_cast<int>(scales_.size()); }
    std::vector<Tensor> taps(const Tensor& chw) override {
        std::vector<Tensor> out;
        for (float s : scales_) {
            Tensor t = chw;
            t.scale_(s);
            out.push_back(std::move(t));
        }
        return out;
    }
    Tensor taps_backward(const std::vector<Tensor>& dtaps) override {
        Tensor g(dtaps.at(0).shape());
        for (size_t k = 0; k < scales_.size(); ++k) {
            Tensor t = dtaps.at(k);
            t.scale_(scales_[k]);
            g.add_(t);
        }
        return g;
    }

private:
    std::vector<float> scales_;
};

/// Fixed-seed random convolutional tap pyramid. Stands in for a pretrained
/// backbone so the metric path runs without downloads: tap 0 at full
/// resolution, each further tap after a stride-2 convolution.
class FixtureFeatureNetwork final : public FeatureNetwork {
public:
    FixtureFeatureNetwork(uint64_t seed, int n_taps = 5, int base_ch = 8) : n_taps_(n_taps) {
        Rng rng = Rng(seed).fork("fixture_fnet");
        int in_ch = 3;
        for (int k = 0; k < n_taps; ++k) {
            const int out_ch = std::min(base_ch << k, 64);
            const int stride = k == 0 ? 1 : 2;
            convs_.push_back(std::make_unique<nn::Conv2d>("fnet.conv" + std::to_string(k), in_ch,
                                                          out_ch, 3, stride, 1, rng));
            relus_.emplace_back();
            in_ch = out_ch;
        }
    }

    std::string name() const override { return "fixture"; }
    int n_taps() const override { return n_taps_; }

    std::vector<Tensor> taps(const Tensor& chw) override {
        std::vector<Tensor> out;
        Tensor h = chw;
        for (int k = 0; k < n_taps_; ++k) {
            h = convs_[static_cast<size_t>(k)]->forward(h);
            h = relus_[static_cast<size_t>(k)].forward(h);
            out.push_back(h);
        }
        return out;
    }

    Tensor taps_backward(const std::vector<Tensor>& dtaps) override {
        Tensor g;
        for (int k = n_taps_ - 1; k >= 0; --k) {
            if (g.empty()) {
                g = dtaps.at(static_cast<size_t>(k));
            } else {
                g.add_(dtaps.at(static_cast<size_t>(k)));
            }
            g = relus_[static_cast<size_t>(k)].backward(g);
            g = convs_[static_cast<size_t>(k)]->backward(g);
        }
        return g;
    }

private:
    int n_taps_;
    std::vector<std::unique_ptr<nn::Conv2d>> convs_;
    std::vector<nn::ReLU> relus_;
};

/// 40-way attribute head. classify() is the value interface; the tensor
/// forward/backward pair carries gradients for the attribute loss.
class AttributeClassifier {
public:
    virtual ~AttributeClassifier() = default;
    virtual std::string name() const = 0;
    virtual Tensor forward(const Tensor& chw) = 0;  // {40} probabilities
    virtual Tensor backward(const Tensor& dprobs) = 0;

    AttributeVector classify(const FaceImage& img) {
        return AttributeVector(forward(img.pixels));
    }
};

/// Fixed-seed random conv net -> pool -> linear -> sigmoid. Fixture backend
/// for the 40-attribute interface.
class FixtureAttributeClassifier final : public AttributeClassifier {
public:
    explicit FixtureAttributeClassifier(uint64_t seed) {
        Rng rng = Rng(seed).fork("fixture_attr");
        conv1_ = std::make_unique<nn::Conv2d>("attr.conv1", 3, 8, 3, 2, 1, rng);
        conv2_ = std::make_unique<nn::Conv2d>("attr.conv2", 8, 16, 3, 2, 1, rng);
        fc_ = std::make_unique<nn::Linear>("attr.fc", 16, 40, rng, 1.0);
    }

    std::string name() const override { return "fixture"; }

    Tensor forward(const Tensor& chw) override {
        Tensor h = relu1_.forward(conv1_->forward(chw));
        h = relu2_.forward(conv2_->forward(h));
        h = gap_.forward(h);
        h = fc_->forward(h);
        return sig_.forward(h);
    }

    Tensor backward(const Tensor& dprobs) override {
        Tensor g = sig_.backward(dprobs);
        g = fc_->backward(g);
        g = gap_.backward(g);
        g = conv2_->backward(relu2_.backward(g));
        return conv1_->backward(relu1_.backward(g));
    }

private:
    std::unique_ptr<nn::Conv2d> conv1_, conv2_;
    std::unique_ptr<nn::Linear> fc_;
    nn::ReLU relu1_, relu2_;
    nn::GlobalAvgPool gap_;
    nn::Sigmoid sig_;
};

// ---------------------------------------------------------------------------
// The four losses
// ---------------------------------------------------------------------------

/// Mean squared difference of two templates: (1/d) * sum_i (t_i - t̂_i)^2.
inline double template_loss(const FacialTemplate& t, const FacialTemplate& t_hat) {
    if (t.d() != t_hat.d())
        throw DimensionError("template_loss: d " + std::to_string(t.d()) + " vs " +
                             std::to_string(t_hat.d()));
    double s = 0.0;
    for (int i = 0; i < t.d(); ++i) {
        const double dv = static_cast<double>(t.values[i]) - t_hat.values[i];
        s += dv * dv;
    }
    return s / t.d();
}

/// Mean squared error over all H*W*3 pixel entries.
inline double pixel_loss(const Tensor& x, const Tensor& x_hat) {
    x.require_same_shape(x_hat, "pixel_loss");
    double s = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        const double dv = static_cast<double>(x[i]) - x_hat[i];
        s += dv * dv;
    }
    return s / static_cast<double>(x.size());
}

inline double pixel_loss(const FaceImage& x, const FaceImage& x_hat) {
    return pixel_loss(x.pixels, x_hat.pixels);
}

/// d pixel_loss / d x_hat.
inline Tensor pixel_loss_grad(const Tensor& x, const Tensor& x_hat) {
    x.require_same_shape(x_hat, "pixel_loss");
    Tensor g(x.shape());
    const double inv = 2.0 / static_cast<double>(x.size());
    for (int64_t i = 0; i < x.size(); ++i)
        g[i] = static_cast<float>((static_cast<double>(x_hat[i]) - x[i]) * inv);
    return g;
}

/// Per-tap normalized squared feature distance, summed over taps:
/// sum_l (1/(H_l*W_l*C_l)) * ||phi_l(x) - phi_l(x̂)||^2.
inline double perceptual_loss(const Tensor& x, const Tensor& x_hat, FeatureNetwork& fnet) {
    x.require_same_shape(x_hat, "perceptual_loss");
    const std::vector<Tensor> fx = fnet.taps(x);
    const std::vector<Tensor> fy = fnet.taps(x_hat);
    double total = 0.0;
    for (size_t l = 0; l < fx.size(); ++l) {
        fx[l].require_same_shape(fy[l], "perceptual tap");
        double s = 0.0;
        for (int64_t i = 0; i < fx[l].size(); ++i) {
            const double dv = static_cast<double>(fx[l][i]) - fy[l][i];
            s += dv * dv;
        }
        total += s / static_cast<double>(fx[l].size());
    }
    return total;
}

inline double perceptual_loss(const FaceImage& x, const FaceImage& x_hat, FeatureNetwork& fnet) {
    return perceptual_loss(x.pixels, x_hat.pixels, fnet);
}

/// Value plus d/dx_hat. The feature network's pass cache belongs to x_hat's
/// forward when backward runs.
inline std::pair<double, Tensor> perceptual_loss_with_grad(const Tensor& x, const Tensor& x_hat,
                                                           FeatureNetwork& fnet) {
    x.require_same_shape(x_hat, "perceptual_loss");
    const std::vector<Tensor> fx = fnet.taps(x);
    const std::vector<Tensor> fy = fnet.taps(x_hat);
    double total = 0.0;
    std::vector<Tensor> dtaps;
    for (size_t l = 0; l < fx.size(); ++l) {
        double s = 0.0;
        Tensor d(fy[l].shape());
        const double inv = 2.0 / static_cast<double>(fy[l].size());
        for (int64_t i = 0; i < fy[l].size(); ++i) {
            const double dv = static_cast<double>(fx[l][i]) - fy[l][i];
            s += dv * dv;
            d[i] = static_cast<float>((static_cast<double>(fy[l][i]) - fx[l][i]) * inv);
        }
        total += s / static_cast<double>(fy[l].size());
        dtaps.push_back(std::move(d));
    }
    return {total, fnet.taps_backward(dtaps)};
}

/// Mean absolute difference of attribute probabilities: (1/40) * sum |a - â|.
inline double attribute_loss(const AttributeVector& ax, const AttributeVector& ax_hat) {
    double s = 0.0;
    for (int i = 0; i < 40; ++i)
        s += std::abs(static_cast<double>(ax.probs[i]) - ax_hat.probs[i]);
    return s / 40.0;
}

// ---------------------------------------------------------------------------
// Loss weights and the per-stage composite objective
// ---------------------------------------------------------------------------

struct LossWeights {
    float w_tmp = 1.0f;
    float w_pix = 1.0f;
    float w_per = 1.0f;
    float w_att = 1.0f;

    void validate() const {
        if (w_tmp < 0 || w_pix < 0 || w_per < 0 || w_att < 0)
            throw ConfigError("loss weights must be nonnegative");
        if (w_tmp == 0 && w_pix == 0 && w_per == 0 && w_att == 0)
            throw ConfigError("at least one loss weight must be positive");
    }
};

/// Stage-dependent objective shape. Stage 1 omits the attribute loss and
/// supervises against masked layer targets; stage 2 adds the attribute loss
/// and supervises the full panorama. Stage 3 reuses the stage-1 shape for
/// layer generators and the stage-2 shape for the panorama generator.
struct StageObjectiveConfig {
    int stage = 1;
    bool panorama_role = false;  // generator_role: layer vs panorama
    LossWeights weights;
    // Stage-1 template-loss handling (paper gap): on/off, and whether the
    // extractor sees the generated layer masked onto a zero canvas or raw.
    bool stage1_template_loss = true;
    bool stage1_template_masked = true;
    // L2-normalize both templates before the MSE (no-op in value for
    // unit-norm extractors; the gradient projection is idempotent there).
    bool normalize_templates = true;

    bool uses_attribute() const { return panorama_role && stage >= 2; }
    bool uses_template() const { return panorama_role || stage1_template_loss; }

    void validate() const {
        if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
        weights.validate();
    }
};

struct ObjectiveParts {
    const Tensor* generated = nullptr;        // x̂: layer or panorama, {3,H,W}
    const Tensor* target = nullptr;           // supervision image, same shape
    const FacialTemplate* target_template = nullptr;
    DifferentiableExtractor* extractor = nullptr;
    FeatureNetwork* fnet = nullptr;
    AttributeClassifier* attr = nullptr;
    const ComponentMask* mask = nullptr;      // stage-1 masked template input
};

struct ObjectiveResult {
    double total = 0.0;
    double tmp = 0.0, pix = 0.0, per = 0.0, att = 0.0;  // unweighted terms
    Tensor grad;  // d total / d generated
};

/// Weighted multi-loss objective with its gradient w.r.t. the generated
/// image. Throws ArityError when a part required by the stage is missing.
inline ObjectiveResult stage_objective(const StageObjectiveConfig& cfg, const ObjectiveParts& p) {
    cfg.validate();
    if (p.generated == nullptr || p.target == nullptr)
        throw ArityError("stage objective requires generated and target images");
    p.generated->require_same_shape(*p.target, "stage objective");

    const LossWeights& w = cfg.weights;
    ObjectiveResult r;
    r.grad = Tensor(p.generated->shape());

    if (w.w_pix > 0.0f) {
        r.pix = pixel_loss(*p.target, *p.generated);
        Tensor g = pixel_loss_grad(*p.target, *p.generated);
        g.scale_(w.w_pix);
        r.grad.add_(g);
    }
    if (w.w_per > 0.0f) {
        if (p.fnet == nullptr) throw ArityError("stage objective requires a feature network");
        auto [value, g] = perceptual_loss_with_grad(*p.target, *p.generated, *p.fnet);
        r.per = value;
        g.scale_(w.w_per);
        r.grad.add_(g);
    }
    if (w.w_tmp > 0.0f && cfg.uses_template()) {
        if (p.extractor == nullptr || p.target_template == nullptr)
            throw ArityError("stage objective requires an extractor and target template");
        const bool mask_input = !cfg.panorama_role && cfg.stage1_template_masked;
        if (mask_input && p.mask == nullptr)
            throw ArityError("stage-1 masked template loss requires the component mask");
        Tensor ex_in = *p.generated;
        if (mask_input) {
            for (int y = 0; y < p.mask->h; ++y)
                for (int x = 0; x < p.mask->w; ++x)
                    if (!p.mask->at(y, x))
                        for (int c = 0; c < 3; ++c) ex_in.at(c, y, x) = 0.0f;
        }
        Tensor t_hat = p.extractor->forward(ex_in);
        Tensor t = p.target_template->values;
        if (t.size() != t_hat.size())
            throw DimensionError("template dimension mismatch in stage objective");
        nn::L2Normalize norm;
        if (cfg.normalize_templates) {
            t_hat = norm.forward(t_hat);
            const double tn = t.norm2();
            if (tn < 1e-12) throw NumericError("zero-norm target template");
            t.scale_(static_cast<float>(1.0 / tn));
        }
        double s = 0.0;
        Tensor dt(t_hat.shape());
        const double inv = 2.0 / static_cast<double>(t.size());
        for (int64_t i = 0; i < t.size(); ++i) {
            const double dv = static_cast<double>(t[i]) - t_hat[i];
            s += dv * dv;
            dt[i] = static_cast<float>((static_cast<double>(t_hat[i]) - t[i]) * inv);
        }
        r.tmp = s / static_cast<double>(t.size());
        dt.scale_(w.w_tmp);
        if (cfg.normalize_templates) dt = norm.backward(dt);
        Tensor g = p.extractor->backward(dt);
        if (mask_input) {
            for (int y = 0; y < p.mask->h; ++y)
                for (int x = 0; x < p.mask->w; ++x)
                    if (!p.mask->at(y, x))
                        for (int c = 0; c < 3; ++c) g.at(c, y, x) = 0.0f;
        }
        r.grad.add_(g);
    }
    if (w.w_att > 0.0f && cfg.uses_attribute()) {
        if (p.attr == nullptr) throw ArityError("stage-2 objective requires an attribute classifier");
        Tensor a = p.attr->forward(*p.target);
        Tensor a_hat = p.attr->forward(*p.generated);  // cache belongs to x̂
        double s = 0.0;
        Tensor da(a_hat.shape());
        for (int64_t i = 0; i < a.size(); ++i) {
            const double dv = static_cast<double>(a[i]) - a_hat[i];
            s += std::abs(dv);
            const double sign = dv > 0.0 ? -1.0 : (dv < 0.0 ? 1.0 : 0.0);
            da[i] = static_cast<float>(sign / static_cast<double>(a.size()));
        }
        r.att = s / static_cast<double>(a.size());
        da.scale_(w.w_att);
        r.grad.add_(p.attr->backward(da));
    }

    r.total = (cfg.uses_template() ? w.w_tmp * r.tmp : 0.0) + w.w_pix * r.pix + w.w_per * r.per +
              (cfg.uses_attribute() ? w.w_att * r.att : 0.0);
    return r;
}

}  // namespace lbfti

#endif  // LBFTI_LOSSES_HPP_
