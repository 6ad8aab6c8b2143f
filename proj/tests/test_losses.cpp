#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lbfti/losses.hpp"

#include "fd_check.hpp"

using namespace lbfti;
using lbfti_test::fd_gradient;
using lbfti_test::grad_rel_error;
using lbfti_test::random_tensor;

namespace {

// Independent brute-force oracles, double accumulation, naive loops.
double mse_loop_oracle(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double l1_loop_oracle(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (int64_t i = 0; i < a.size(); ++i)
        s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    return s / static_cast<double>(a.size());
}

AttributeVector random_attrs(Rng& rng) {
    Tensor p({40});
    for (int i = 0; i < 40; ++i) p[i] = static_cast<float>(rng.uniform());
    return AttributeVector(p);
}

}  // namespace

TEST_CASE("template loss analytic cases") {
    Tensor a({512}), b({512});
    a[0] = 1.0f;  // one-hot vs zero
    CHECK(template_loss(FacialTemplate(a), FacialTemplate(b)) ==
          doctest::Approx(1.0 / 512).epsilon(1e-12));

    Tensor t({2}), th({2});
    t[0] = 1.0f;
    t[1] = 1.0f;
    th[0] = 0.0f;
    th[1] = -1.0f;
    CHECK(template_loss(FacialTemplate(t), FacialTemplate(th)) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(template_loss(FacialTemplate(t), FacialTemplate(t)) == 0.0);

    Tensor d3({3});
    CHECK_THROWS_AS(template_loss(FacialTemplate(t), FacialTemplate(d3)), DimensionError);
}

TEST_CASE("pixel loss analytic cases and loop oracle") {
    Tensor x({3, 4, 4}), y({3, 4, 4});
    x.fill(1.0f);
    y.fill(-1.0f);
    CHECK(pixel_loss(x, y) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(pixel_loss(x, x) == 0.0);

    Rng rng(19);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor a = random_tensor({3, 8, 8}, rng, 0.5);
        Tensor b = random_tensor({3, 8, 8}, rng, 0.5);
        CHECK(std::abs(pixel_loss(a, b) - mse_loop_oracle(a, b)) < 1e-9);
    }
    CHECK_THROWS_AS(pixel_loss(x, Tensor({3, 2, 2})), DimensionError);
}

TEST_CASE("pixel loss is symmetric") {
    Rng rng(23);
    Tensor a = random_tensor({3, 6, 6}, rng);
    Tensor b = random_tensor({3, 6, 6}, rng);
    CHECK(pixel_loss(a, b) == doctest::Approx(pixel_loss(b, a)).epsilon(1e-15));
}

TEST_CASE("perceptual loss reductions") {
    Rng rng(29);
    Tensor x = random_tensor({3, 8, 8}, rng, 0.4);
    Tensor y = random_tensor({3, 8, 8}, rng, 0.4);

    IdentityFeatureNetwork id;
    CHECK(std::abs(perceptual_loss(x, y, id) - pixel_loss(x, y)) < 1e-9);
    CHECK(perceptual_loss(x, x, id) == 0.0);

    ScaledTapsNetwork two({1.0f, 2.0f});
    CHECK(perceptual_loss(x, y, two) == doctest::Approx(5.0 * pixel_loss(x, y)).epsilon(1e-9));
}

TEST_CASE("perceptual loss through the fixture network") {
    Rng rng(31);
    Tensor x = random_tensor({3, 16, 16}, rng, 0.4);
    FixtureFeatureNetwork fnet(5, 3);
    CHECK(perceptual_loss(x, x, fnet) == 0.0);
    Tensor y = x;
    y[10] += 0.3f;
    CHECK(perceptual_loss(x, y, fnet) > 0.0);

    // taps ordered by decreasing spatial size
    auto taps = fnet.taps(x);
    for (size_t k = 1; k < taps.size(); ++k) CHECK(taps[k].dim(1) <= taps[k - 1].dim(1));

    // gradient against central differences
    auto f = [&](const Tensor& yi) { return perceptual_loss(x, yi, fnet); };
    auto [v, g] = perceptual_loss_with_grad(x, y, fnet);
    CHECK(v == doctest::Approx(perceptual_loss(x, y, fnet)).epsilon(1e-12));
    CHECK(grad_rel_error(g, fd_gradient(f, y, 1e-3)) < 5e-3);
}

TEST_CASE("attribute loss analytic cases") {
    Tensor a({40}), b({40});
    a.fill(0.5f);
    b.fill(0.0f);
    CHECK(attribute_loss(AttributeVector(a), AttributeVector(b)) == doctest::Approx(0.5).epsilon(1e-12));
    Tensor one({40});
    one.fill(1.0f);
    Tensor zero({40});
    CHECK(attribute_loss(AttributeVector(one), AttributeVector(zero)) == doctest::Approx(1.0));
    CHECK(attribute_loss(AttributeVector(a), AttributeVector(a)) == 0.0);

    Rng rng(37);
    for (int trial = 0; trial < 100; ++trial) {
        AttributeVector u = random_attrs(rng), v = random_attrs(rng);
        CHECK(std::abs(attribute_loss(u, v) - l1_loop_oracle(u.probs, v.probs)) < 1e-9);
    }
}

TEST_CASE("loss weights validation") {
    LossWeights w;
    CHECK_NOTHROW(w.validate());
    w.w_tmp = w.w_pix = w.w_per = w.w_att = 0.0f;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w.w_pix = -1.0f;
    CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("stage objective: zero when all parts agree") {
    Rng rng(41);
    Tensor x = random_tensor({3, 8, 8}, rng, 0.3);
    ToyExtractorConfig ecfg;
    ecfg.d = 16;
    ecfg.width = 6;
    ecfg.input_size = 8;
    ecfg.seed = 5;
    ToyExtractor ex(ecfg);
    IdentityFeatureNetwork fnet;

    FacialTemplate t(ex.forward(x));

    StageObjectiveConfig cfg;
    cfg.stage = 1;
    cfg.panorama_role = false;
    cfg.stage1_template_masked = false;
    ObjectiveParts parts;
    parts.generated = &x;
    parts.target = &x;
    parts.target_template = &t;
    parts.extractor = &ex;
    parts.fnet = &fnet;
    ObjectiveResult r = stage_objective(cfg, parts);
    CHECK(r.total == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("stage 2 with zero attribute weight reduces to the stage-1 formula") {
    Rng rng(43);
    Tensor x = random_tensor({3, 8, 8}, rng, 0.3);
    Tensor y = random_tensor({3, 8, 8}, rng, 0.3);
    ToyExtractorConfig ecfg;
    ecfg.d = 16;
    ecfg.width = 6;
    ecfg.input_size = 8;
    ecfg.seed = 6;
    ToyExtractor ex(ecfg);
    IdentityFeatureNetwork fnet;
    FacialTemplate t(ex.forward(x));

    StageObjectiveConfig s2;
    s2.stage = 2;
    s2.panorama_role = true;
    s2.weights.w_att = 0.0f;
    ObjectiveParts parts;
    parts.generated = &y;
    parts.target = &x;
    parts.target_template = &t;
    parts.extractor = &ex;
    parts.fnet = &fnet;
    ObjectiveResult r2 = stage_objective(s2, parts);

    StageObjectiveConfig s1;
    s1.stage = 1;
    s1.panorama_role = false;
    s1.stage1_template_masked = false;
    ObjectiveResult r1 = stage_objective(s1, parts);
    CHECK(r2.total == doctest::Approx(r1.total).epsilon(1e-12));
    CHECK(max_abs_diff(r2.grad, r1.grad) == 0.0);
}

TEST_CASE("stage objective arity errors") {
    Rng rng(47);
    Tensor x = random_tensor({3, 8, 8}, rng, 0.3);
    StageObjectiveConfig cfg;
    cfg.stage = 2;
    cfg.panorama_role = true;
    ObjectiveParts parts;
    parts.generated = &x;
    parts.target = &x;
    CHECK_THROWS_AS(stage_objective(cfg, parts), ArityError);  // missing fnet

    IdentityFeatureNetwork fnet;
    parts.fnet = &fnet;
    CHECK_THROWS_AS(stage_objective(cfg, parts), ArityError);  // missing extractor
}

TEST_CASE("stage objective gradients match finite differences on 8x8 tensors") {
    Rng rng(53);
    Tensor target = random_tensor({3, 8, 8}, rng, 0.3);
    Tensor gen = random_tensor({3, 8, 8}, rng, 0.3);

    ToyExtractorConfig ecfg;
    ecfg.d = 16;
    ecfg.width = 6;
    ecfg.input_size = 8;
    ecfg.seed = 11;
    ToyExtractor ex(ecfg);
    FixtureFeatureNetwork fnet(7, 3);
    FixtureAttributeClassifier attr(9);
    FacialTemplate t(ex.forward(target));

    for (int variant = 0; variant < 3; ++variant) {
        StageObjectiveConfig cfg;
        if (variant == 0) {
            cfg.stage = 1;
            cfg.panorama_role = false;
            cfg.stage1_template_masked = false;
        } else if (variant == 1) {
            cfg.stage = 2;
            cfg.panorama_role = true;
        } else {
            cfg.stage = 3;
            cfg.panorama_role = true;
        }
        ObjectiveParts parts;
        parts.generated = &gen;
        parts.target = &target;
        parts.target_template = &t;
        parts.extractor = &ex;
        parts.fnet = &fnet;
        parts.attr = &attr;

        ObjectiveResult r = stage_objective(cfg, parts);
        auto f = [&](const Tensor& gi) {
            ObjectiveParts p2 = parts;
            p2.generated = &gi;
            return stage_objective(cfg, p2).total;
        };
        Tensor fd = fd_gradient(f, gen, 1e-3);
        CHECK(grad_rel_error(r.grad, fd) < 1e-3);
    }
}

TEST_CASE("stage-1 masked template input zeroes gradient outside the mask") {
    Rng rng(59);
    Tensor target = random_tensor({3, 8, 8}, rng, 0.3);
    Tensor gen = random_tensor({3, 8, 8}, rng, 0.3);
    ToyExtractorConfig ecfg;
    ecfg.d = 16;
    ecfg.width = 6;
    ecfg.input_size = 8;
    ecfg.seed = 13;
    ToyExtractor ex(ecfg);
    FacialTemplate t(ex.forward(target));

    ComponentMask m(Component::eyes, 8, 8);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) m.set(y, x, true);

    StageObjectiveConfig cfg;
    cfg.stage = 1;
    cfg.weights.w_pix = 0.0f;
    cfg.weights.w_per = 0.0f;  // isolate the template term
    ObjectiveParts parts;
    parts.generated = &gen;
    parts.target = &target;
    parts.target_template = &t;
    parts.extractor = &ex;
    parts.mask = &m;
    ObjectiveResult r = stage_objective(cfg, parts);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            if (!m.at(y, x))
                for (int c = 0; c < 3; ++c) CHECK(r.grad.at(c, y, x) == 0.0f);
    CHECK(r.grad.max_abs() > 0.0f);
}

namespace {

// differentiable extractor with non-unit outputs, for the normalize flag
class ScaledExtractor final : public DifferentiableExtractor {
public:
    ScaledExtractor(ToyExtractorConfig cfg, float scale) : inner_(cfg), scale_(scale) {
        desc_ = inner_.descriptor();
        desc_.name = "scaled-toy";
        desc_.normalized = false;
    }
    const ExtractorDescriptor& descriptor() const override { return desc_; }
    FacialTemplate extract(const FaceImage& img) const override {
        FacialTemplate t = inner_.extract(img);
        t.values.scale_(scale_);
        return t;
    }
    Tensor forward(const Tensor& chw) override {
        Tensor t = inner_.forward(chw);
        t.scale_(scale_);
        return t;
    }
    Tensor backward(const Tensor& dt) override {
        Tensor g = dt;
        g.scale_(scale_);
        return inner_.backward(g);
    }

private:
    ToyExtractor inner_;
    float scale_;
    ExtractorDescriptor desc_;
};

}  // namespace

TEST_CASE("normalize_templates makes the template term scale-invariant") {
    Rng rng(61);
    Tensor target = random_tensor({3, 8, 8}, rng, 0.3);
    Tensor gen = random_tensor({3, 8, 8}, rng, 0.3);
    ToyExtractorConfig ecfg;
    ecfg.d = 16;
    ecfg.width = 6;
    ecfg.input_size = 8;
    ecfg.seed = 21;

    StageObjectiveConfig cfg;
    cfg.stage = 1;
    cfg.weights.w_pix = 0.0f;
    cfg.weights.w_per = 0.0f;
    cfg.stage1_template_masked = false;
    cfg.normalize_templates = true;

    double totals[2];
    Tensor grads[2];
    int idx = 0;
    for (float scale : {1.0f, 3.0f}) {
        ScaledExtractor ex(ecfg, scale);
        FacialTemplate t(ex.forward(target));
        ObjectiveParts parts;
        parts.generated = &gen;
        parts.target = &target;
        parts.target_template = &t;
        parts.extractor = &ex;
        ObjectiveResult r = stage_objective(cfg, parts);
        totals[idx] = r.total;
        grads[idx] = r.grad;
        ++idx;
    }
    CHECK(totals[0] == doctest::Approx(totals[1]).epsilon(1e-6));
    CHECK(max_abs_diff(grads[0], grads[1]) < 1e-6);

    // with normalization off, the scaled extractor yields a different value
    cfg.normalize_templates = false;
    ScaledExtractor ex(ecfg, 3.0f);
    FacialTemplate t(ex.forward(target));
    ObjectiveParts parts;
    parts.generated = &gen;
    parts.target = &target;
    parts.target_template = &t;
    parts.extractor = &ex;
    CHECK(stage_objective(cfg, parts).total != doctest::Approx(totals[0]).epsilon(1e-6));
}
