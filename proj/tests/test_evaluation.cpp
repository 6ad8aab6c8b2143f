#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lbfti/evaluation.hpp"
#include "lbfti/masks.hpp"

#include "fd_check.hpp"

using namespace lbfti;
using lbfti_test::random_tensor;

namespace {

// Exhaustive oracle: try every observed score ascending, return the first
// that keeps the empirical FAR within budget; max+eps if none.
ThresholdResult brute_force_threshold(std::vector<double> scores, double far) {
    std::sort(scores.begin(), scores.end());
    const double n = static_cast<double>(scores.size());
    for (double tau : scores) {
        int64_t count = 0;
        for (double s : scores)
            if (s >= tau) ++count;
        if (static_cast<double>(count) / n <= far + 1e-12) return {tau, false};
    }
    return {scores.back() + 1e-6, true};
}

double fapd_loop_oracle(const FaceImage& x, const FaceImage& y, const MaskSet& masks) {
    double s = 0.0;
    int64_t n = 0;
    for (int yy = 0; yy < x.height(); ++yy)
        for (int xx = 0; xx < x.width(); ++xx) {
            bool fg = false;
            for (Component c : kForegroundComponents) fg = fg || masks.at(c).at(yy, xx);
            if (!fg) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = static_cast<double>(x.pixels.at(c, yy, xx)) - y.pixels.at(c, yy, xx);
                s += d * d;
                ++n;
            }
        }
    return s / static_cast<double>(n);
}

FacialTemplate rand_template(Rng& rng, int d = 8) {
    Tensor t({d});
    for (int i = 0; i < d; ++i) t[i] = static_cast<float>(rng.normal());
    t.scale_(static_cast<float>(1.0 / t.norm2()));
    return FacialTemplate(t);
}

}  // namespace

TEST_CASE("calibrate_threshold matches the spec's worked examples") {
    std::vector<double> imp;
    for (int i = 1; i <= 10; ++i) imp.push_back(i / 10.0);
    ThresholdResult r1 = calibrate_threshold(imp, 0.1);
    CHECK(r1.threshold == doctest::Approx(1.0));
    CHECK_FALSE(r1.far_unreachable);

    ThresholdResult r5 = calibrate_threshold(imp, 0.5);
    CHECK(r5.threshold == doctest::Approx(0.6));

    // FAR below 1/n: warning flag, max + eps
    ThresholdResult tiny = calibrate_threshold(imp, 0.01);
    CHECK(tiny.far_unreachable);
    CHECK(tiny.threshold > 1.0);

    CHECK_THROWS_AS(calibrate_threshold({}, 0.1), DataError);
    CHECK_THROWS_AS(calibrate_threshold(imp, 0.0), RangeError);
}

TEST_CASE("calibrate_threshold matches brute force on random score sets") {
    Rng rng(71);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 5 + static_cast<int>(rng.uniform_int(60));
        std::vector<double> scores;
        for (int i = 0; i < n; ++i) scores.push_back(std::round(rng.uniform(-1.0, 1.0) * 50) / 50.0);
        const double far = rng.uniform(0.02, 0.6);
        ThresholdResult got = calibrate_threshold(scores, far);
        ThresholdResult want = brute_force_threshold(scores, far);
        CHECK(got.threshold == doctest::Approx(want.threshold).epsilon(1e-12));
        CHECK(got.far_unreachable == want.far_unreachable);

        // empirical FAR never exceeds the request
        int64_t count = 0;
        for (double s : scores)
            if (s >= got.threshold) ++count;
        CHECK(static_cast<double>(count) / n <= far + 1e-12);
    }
}

TEST_CASE("tar_at_far analytic cases and monotonicity") {
    VerificationScoreSet s;
    s.protocol = Protocol::type1;
    for (int i = 0; i < 50; ++i) s.genuine.push_back({1.0, "g"});
    for (int i = 0; i < 200; ++i) s.impostor.push_back({-1.0, "i"});
    CHECK(tar_at_far(s, 0.01) == 1.0);
    CHECK(tar_at_far(s, 0.3) == 1.0);

    VerificationScoreSet lo;
    for (int i = 0; i < 50; ++i) lo.genuine.push_back({-0.9, "g"});
    for (int i = 0; i < 200; ++i) lo.impostor.push_back({0.5 + (i % 5) * 0.05, "i"});
    CHECK(tar_at_far(lo, 0.01) == 0.0);

    // TAR monotone non-decreasing in FAR on a random score set
    Rng rng(73);
    VerificationScoreSet rnd;
    for (int i = 0; i < 300; ++i) rnd.genuine.push_back({rng.uniform(-1.0, 1.0), "g"});
    for (int i = 0; i < 3000; ++i) rnd.impostor.push_back({rng.uniform(-1.0, 1.0), "i"});
    double prev = 0.0;
    for (double far : {0.001, 0.01, 0.05, 0.1, 0.3, 0.5}) {
        const double tar = tar_at_far(rnd, far);
        CHECK(tar >= prev);
        prev = tar;
    }
}

TEST_CASE("genuine == impostor distribution gives TAR close to FAR") {
    Rng rng(79);
    VerificationScoreSet s;
    for (int i = 0; i < 10000; ++i) s.genuine.push_back({rng.uniform(-1.0, 1.0), "g"});
    for (int i = 0; i < 10000; ++i) s.impostor.push_back({rng.uniform(-1.0, 1.0), "i"});
    for (double far : {0.05, 0.1, 0.2}) {
        const double tar = tar_at_far(s, far);
        CHECK(std::abs(tar - far) < 0.05);
    }
}

TEST_CASE("build_protocol_pairs counting") {
    Rng rng(83);
    // 2 subjects x 2 images
    std::vector<FacialTemplate> recon, orig;
    std::vector<std::string> subj = {"a", "a", "b", "b"};
    for (int i = 0; i < 4; ++i) {
        recon.push_back(rand_template(rng));
        orig.push_back(rand_template(rng));
    }
    VerificationScoreSet t1 = build_protocol_pairs(recon, orig, subj, Protocol::type1);
    CHECK(t1.genuine.size() == 4);  // one per reconstruction

    VerificationScoreSet t2 = build_protocol_pairs(recon, orig, subj, Protocol::type2);
    CHECK(t2.genuine.size() == 4);  // each reconstruction has exactly one mate
    CHECK(t2.n_failures == 0);

    // single-image subjects are skipped and counted
    std::vector<std::string> lonely = {"a", "a", "b", "c"};
    VerificationScoreSet t2b = build_protocol_pairs(recon, orig, lonely, Protocol::type2);
    CHECK(t2b.genuine.size() == 2);
    CHECK(t2b.n_failures == 2);

    // seeded impostor sampling is reproducible
    VerificationScoreSet x = build_protocol_pairs(recon, orig, subj, Protocol::type1, {10, 5});
    VerificationScoreSet y = build_protocol_pairs(recon, orig, subj, Protocol::type1, {10, 5});
    REQUIRE(x.impostor.size() == y.impostor.size());
    CHECK(x.impostor.size() == 40);  // 10x genuine
    for (size_t i = 0; i < x.impostor.size(); ++i) {
        CHECK(x.impostor[i].pair_id == y.impostor[i].pair_id);
        CHECK(x.impostor[i].score == y.impostor[i].score);
    }
}

TEST_CASE("fapd: region restriction, symmetry, bounds, loop oracle") {
    SyntheticFace f = generate_synthetic_face({21, 0}, 64);
    const MaskSet& masks = f.bundle.masks;

    CHECK(fapd(f.image, f.image, masks) == 0.0);

    // foreground differs by 0.5, background by 1.0 -> 0.25
    ComponentMask u = foreground_union(masks);
    FaceImage other(f.image.pixels);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            for (int c = 0; c < 3; ++c)
                other.pixels.at(c, y, x) += u.at(y, x) ? 0.5f : 1.0f;
    CHECK(fapd(f.image, other, masks) == doctest::Approx(0.25).epsilon(1e-9));

    // random pair equals the explicit loop oracle, symmetric, bounded by 4
    Rng rng(89);
    for (int trial = 0; trial < 5; ++trial) {
        SyntheticFace g = generate_synthetic_face({22 + static_cast<uint64_t>(trial), 0}, 64);
        const double d1 = fapd(f.image, g.image, masks);
        CHECK(d1 == doctest::Approx(fapd_loop_oracle(f.image, g.image, masks)).epsilon(1e-12));
        CHECK(d1 == doctest::Approx(fapd(g.image, f.image, masks)).epsilon(1e-12));
        CHECK(d1 <= 4.0);
    }
}

TEST_CASE("fapd equals pixel_loss under full-image foreground masks") {
    SyntheticFace a = generate_synthetic_face({31, 0}, 32);
    SyntheticFace b = generate_synthetic_face({32, 0}, 32);
    MaskSet full;
    for (Component c : kComponents) {
        ComponentMask m(c, 32, 32);
        std::fill(m.bits.begin(), m.bits.end(), 1);
        full[c] = m;
    }
    CHECK(fapd(a.image, b.image, full) ==
          doctest::Approx(pixel_loss(a.image, b.image)).epsilon(1e-12));
}

TEST_CASE("fapd flags empty foregrounds as failures") {
    SyntheticFace a = generate_synthetic_face({33, 0}, 32);
    MaskSet empty;
    for (Component c : kComponents) {
        ComponentMask m(c, 32, 32);
        m.detection_failure = true;
        empty[c] = m;
    }
    CHECK_THROWS_AS(fapd(a.image, a.image, empty), DataError);
}

TEST_CASE("fapc reductions") {
    SyntheticFace a = generate_synthetic_face({41, 0}, 32);
    SyntheticFace b = generate_synthetic_face({42, 0}, 32);
    IdentityFeatureNetwork id;

    CHECK(fapc(a.image, a.image, a.bundle.masks, id) == 0.0);

    // identity taps: fapc equals the pixel MSE of the masked images
    ComponentMask u = foreground_union(a.bundle.masks);
    FaceImage ma = apply_mask(a.image, u);
    FaceImage mb = apply_mask(b.image, u);
    CHECK(fapc(a.image, b.image, a.bundle.masks, id) ==
          doctest::Approx(pixel_loss(ma, mb)).epsilon(1e-12));

    // differences confined to the background vanish
    FaceImage bg_only(a.image.pixels);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (!u.at(y, x))
                for (int c = 0; c < 3; ++c)
                    bg_only.pixels.at(c, y, x) = std::clamp(bg_only.pixels.at(c, y, x) + 0.4f, -1.0f, 1.0f);
    CHECK(fapc(a.image, bg_only, a.bundle.masks, id) == 0.0);
}

TEST_CASE("EvalReport JSON round-trip is lossless") {
    EvalReport r;
    r.extractor_name = "toy-1";
    r.tar_at[EvalReport::key(Protocol::type1, 0.01)] = 0.9875;
    r.tar_at[EvalReport::key(Protocol::type2, 0.001)] = 0.4428571428571429;
    r.fapd_mean = 0.04417652341;
    r.fapc_mean = 0.2210987654321;
    r.n_pairs = 352;
    r.n_failures = 3;

    EvalReport back = EvalReport::from_json(nlohmann::json::parse(r.to_json().dump()));
    CHECK(back.extractor_name == r.extractor_name);
    CHECK(back.tar_at == r.tar_at);
    CHECK(back.fapd_mean == r.fapd_mean);
    CHECK(back.fapc_mean == r.fapc_mean);
    CHECK(back.n_pairs == r.n_pairs);
    CHECK(back.n_failures == r.n_failures);
}
