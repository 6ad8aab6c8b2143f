#ifndef LBFTI_EVALUATION_HPP_
#define LBFTI_EVALUATION_HPP_

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lbfti/core/rng.hpp"
#include "lbfti/domain.hpp"
#include "lbfti/errors.hpp"
#include "lbfti/extractor.hpp"
#include "lbfti/losses.hpp"

namespace lbfti {

// ---------------------------------------------------------------------------
// Verification scores and TAR@FAR
// ---------------------------------------------------------------------------

enum class Protocol { type1, type2 };

inline const char* protocol_name(Protocol p) { return p == Protocol::type1 ? "type1" : "type2"; }

struct ScoredPair {
    double score = 0.0;
    std::string pair_id;
};

/// Genuine/impostor similarity scores for one protocol.
struct VerificationScoreSet {
    std::vector<ScoredPair> genuine;
    std::vector<ScoredPair> impostor;
    Protocol protocol = Protocol::type1;
    int n_failures = 0;

    void validate() const {
        for (const auto& p : genuine)
            if (p.score < -1.0 || p.score > 1.0) throw RangeError("genuine score outside [-1,1]");
        for (const auto& p : impostor)
            if (p.score < -1.0 || p.score > 1.0) throw RangeError("impostor score outside [-1,1]");
    }
};

struct ThresholdResult {
    double threshold = 0.0;
    bool far_unreachable = false;  // requested FAR below 1/|impostor|
};

/// Smallest observed score value tau with fraction(impostor >= tau) <= far;
/// ties break toward the stricter (higher) tau. When even the maximum score
/// violates the constraint, returns max+epsilon with a warning flag.
inline ThresholdResult calibrate_threshold(const std::vector<double>& impostor_scores, double far) {
    if (impostor_scores.empty()) throw DataError("calibrate_threshold: no impostor scores");
    if (!(far > 0.0 && far < 1.0)) throw RangeError("far must be in (0,1)");
    std::vector<double> sorted = impostor_scores;
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    const double budget = far * n + 1e-12;

    // Scan candidates ascending; count(>= sorted[i]) == n - i for the first
    // occurrence of each distinct value.
    for (size_t i = 0; i < sorted.size(); ++i) {
        if (i > 0 && sorted[i] == sorted[i - 1]) continue;
        const double count_ge = n - static_cast<double>(i);
        if (count_ge <= budget) return {sorted[i], false};
    }
    return {sorted.back() + 1e-6, true};
}

/// Fraction of genuine scores passing the FAR-calibrated threshold.
inline double tar_at_far(const VerificationScoreSet& scores, double far) {
    scores.validate();
    std::vector<double> imp;
    imp.reserve(scores.impostor.size());
    for (const auto& p : scores.impostor) imp.push_back(p.score);
    const ThresholdResult th = calibrate_threshold(imp, far);
    if (scores.genuine.empty()) return 0.0;
    int64_t pass = 0;
    for (const auto& p : scores.genuine)
        if (p.score >= th.threshold) ++pass;
    return static_cast<double>(pass) / static_cast<double>(scores.genuine.size());
}

// ---------------------------------------------------------------------------
// Protocol pairing
// ---------------------------------------------------------------------------

struct PairingOptions {
    int impostor_factor = 10;  // impostor pairs per genuine pair
    uint64_t seed = 97;
};

/// Builds the Type-I / Type-II genuine pairs and seeded impostor pairs from
/// precomputed templates. `recon` holds one template per reconstruction,
/// aligned with `originals` and `subject_ids`. Type-II subjects with a single
/// image are skipped and counted as failures.
inline VerificationScoreSet build_protocol_pairs(const std::vector<FacialTemplate>& recon,
                                                 const std::vector<FacialTemplate>& originals,
                                                 const std::vector<std::string>& subject_ids,
                                                 Protocol protocol,
                                                 const PairingOptions& opts = {}) {
    if (recon.size() != originals.size() || recon.size() != subject_ids.size())
        throw DimensionError("build_protocol_pairs: input sizes differ");
    const size_t n = recon.size();
    if (n == 0) throw DataError("build_protocol_pairs: empty inputs");

    std::map<std::string, std::vector<size_t>> by_subject;
    for (size_t i = 0; i < n; ++i) by_subject[subject_ids[i]].push_back(i);

    VerificationScoreSet out;
    out.protocol = protocol;

    for (size_t i = 0; i < n; ++i) {
        if (protocol == Protocol::type1) {
            out.genuine.push_back(
                {similarity(recon[i], originals[i]), "t1:" + std::to_string(i)});
        } else {
            const auto& mates = by_subject.at(subject_ids[i]);
            if (mates.size() < 2) {
                ++out.n_failures;
                continue;
            }
            for (size_t j : mates) {
                if (j == i) continue;
                out.genuine.push_back({similarity(recon[i], originals[j]),
                                       "t2:" + std::to_string(i) + ":" + std::to_string(j)});
            }
        }
    }

    // seeded impostor sampling: reconstruction vs a different subject
    Rng rng = Rng(opts.seed).fork("impostor_pairs");
    const size_t want = out.genuine.size() * static_cast<size_t>(opts.impostor_factor);
    size_t guard = 0;
    while (out.impostor.size() < want && guard < want * 50 + 1000) {
        ++guard;
        const size_t i = static_cast<size_t>(rng.uniform_int(n));
        const size_t k = static_cast<size_t>(rng.uniform_int(n));
        if (subject_ids[i] == subject_ids[k]) continue;
        out.impostor.push_back({similarity(recon[i], originals[k]),
                                "imp:" + std::to_string(i) + ":" + std::to_string(k)});
    }
    if (out.impostor.empty()) throw DataError("no impostor pairs available (single subject?)");
    return out;
}

// ---------------------------------------------------------------------------
// Human-perception metrics: FAPD and FAPC over foreground regions
// ---------------------------------------------------------------------------

inline ComponentMask foreground_union(const MaskSet& masks) {
    const ComponentMask& first = masks.at(Component::eyebrows);
    ComponentMask u(Component::eyebrows, first.h, first.w);
    for (Component c : kForegroundComponents) {
        const ComponentMask& m = masks.at(c);
        if (m.h != u.h || m.w != u.w) throw DimensionError("foreground masks disagree on size");
        for (size_t i = 0; i < u.bits.size(); ++i) u.bits[i] |= m.bits[i];
    }
    return u;
}

/// Mean squared pixel deviation restricted to the foreground regions.
/// Throws DataError when the foreground is empty (detection failure); the
/// caller excludes such pairs and counts them.
inline double fapd(const FaceImage& x, const FaceImage& x_hat, const MaskSet& masks) {
    x.pixels.require_same_shape(x_hat.pixels, "fapd");
    const ComponentMask u = foreground_union(masks);
    if (u.h != x.height() || u.w != x.width())
        throw DimensionError("fapd: mask size does not match images");
    int64_t n = 0;
    double s = 0.0;
    for (int y = 0; y < u.h; ++y)
        for (int xpos = 0; xpos < u.w; ++xpos) {
            if (!u.at(y, xpos)) continue;
            for (int c = 0; c < 3; ++c) {
                const double d =
                    static_cast<double>(x.pixels.at(c, y, xpos)) - x_hat.pixels.at(c, y, xpos);
                s += d * d;
                ++n;
            }
        }
    if (n == 0) throw DataError("fapd: empty foreground (detection failure)");
    return s / static_cast<double>(n);
}

/// Perceptual distance of the foreground-masked images (background zeroed on
/// both inputs before feature extraction).
inline double fapc(const FaceImage& x, const FaceImage& x_hat, const MaskSet& masks,
                   FeatureNetwork& fnet) {
    x.pixels.require_same_shape(x_hat.pixels, "fapc");
    const ComponentMask u = foreground_union(masks);
    if (u.popcount() == 0) throw DataError("fapc: empty foreground (detection failure)");
    const FaceImage mx = apply_mask(x, u);
    const FaceImage my = apply_mask(x_hat, u);
    return perceptual_loss(mx.pixels, my.pixels, fnet);
}

// ---------------------------------------------------------------------------
// EvalReport
// ---------------------------------------------------------------------------

/// Machine-authentication plus human-perception metrics for one scoring
/// extractor. TAR is keyed by (protocol, FAR).
struct EvalReport {
    std::string extractor_name;
    std::map<std::string, double> tar_at;  // key: "type1@0.01" etc.
    double fapd_mean = 0.0;
    double fapc_mean = 0.0;
    int64_t n_pairs = 0;
    int64_t n_failures = 0;

    static std::string key(Protocol p, double far) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%s@%g", protocol_name(p), far);
        return buf;
    }

    void validate() const {
        for (const auto& [k, v] : tar_at)
            if (v < 0.0 || v > 1.0) throw RangeError("TAR outside [0,1] at " + k);
    }

    nlohmann::json to_json() const {
        return {{"extractor", extractor_name}, {"tar_at", tar_at},   {"fapd", fapd_mean},
                {"fapc", fapc_mean},           {"n_pairs", n_pairs}, {"n_failures", n_failures}};
    }

    static EvalReport from_json(const nlohmann::json& j) {
        EvalReport r;
        r.extractor_name = j.at("extractor").get<std::string>();
        r.tar_at = j.at("tar_at").get<std::map<std::string, double>>();
        r.fapd_mean = j.at("fapd").get<double>();
        r.fapc_mean = j.at("fapc").get<double>();
        r.n_pairs = j.at("n_pairs").get<int64_t>();
        r.n_failures = j.at("n_failures").get<int64_t>();
        r.validate();
        return r;
    }
};

/// One evaluation item: original image, its ground-truth masks, subject id.
struct EvalItem {
    FaceImage image;
    MaskSet masks;
    std::string subject_id;
};

struct EvalOptions {
    std::vector<double> fars = {0.01, 0.001};
    PairingOptions pairing;
};

/// Scores reconstructions against one extractor: TAR at every requested FAR
/// for both protocols, plus FAPD/FAPC means over non-failed pairs.
inline EvalReport evaluate_reconstructions(const std::vector<FaceImage>& reconstructions,
                                           const std::vector<EvalItem>& items,
                                           const TemplateExtractor& scorer, FeatureNetwork& fnet,
                                           const EvalOptions& opts = {}) {
    if (reconstructions.size() != items.size())
        throw DimensionError("evaluate_reconstructions: item count mismatch");
    EvalReport report;
    report.extractor_name = scorer.descriptor().name;

    std::vector<FacialTemplate> recon_t, orig_t;
    std::vector<std::string> subjects;
    for (size_t i = 0; i < items.size(); ++i) {
        recon_t.push_back(scorer.extract(reconstructions[i]));
        orig_t.push_back(scorer.extract(items[i].image));
        subjects.push_back(items[i].subject_id);
    }

    for (Protocol proto : {Protocol::type1, Protocol::type2}) {
        VerificationScoreSet scores =
            build_protocol_pairs(recon_t, orig_t, subjects, proto, opts.pairing);
        report.n_pairs += static_cast<int64_t>(scores.genuine.size() + scores.impostor.size());
        report.n_failures += scores.n_failures;
        for (double far : opts.fars)
            report.tar_at[EvalReport::key(proto, far)] = tar_at_far(scores, far);
    }

    double fapd_sum = 0.0, fapc_sum = 0.0;
    int64_t n_ok = 0;
    for (size_t i = 0; i < items.size(); ++i) {
        const ComponentMask u = foreground_union(items[i].masks);
        if (u.popcount() == 0) {
            ++report.n_failures;
            continue;
        }
        fapd_sum += fapd(items[i].image, reconstructions[i], items[i].masks);
        fapc_sum += fapc(items[i].image, reconstructions[i], items[i].masks, fnet);
        ++n_ok;
    }
    if (n_ok > 0) {
        report.fapd_mean = fapd_sum / static_cast<double>(n_ok);
        report.fapc_mean = fapc_sum / static_cast<double>(n_ok);
    }
    report.validate();
    return report;
}

}  // namespace lbfti

#endif  // LBFTI_EVALUATION_HPP_
