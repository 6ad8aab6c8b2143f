#ifndef LBFTI_MASKS_HPP_
#define LBFTI_MASKS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lbfti/core/rng.hpp"
#include "lbfti/domain.hpp"
#include "lbfti/errors.hpp"

namespace lbfti {

// ---------------------------------------------------------------------------
// Landmarks
// ---------------------------------------------------------------------------

struct Point2 {
    double x = 0.0, y = 0.0;
};

/// 68 facial landmarks following the standard annotation scheme:
/// 0-16 jaw, 17-21 left brow, 22-26 right brow, 27-30 nose bridge,
/// 31-35 nose base, 36-41 left eye, 42-47 right eye, 48-59 outer lip,
/// 60-67 inner lip.
struct LandmarkSet {
    std::array<Point2, 68> points;

    void validate(int h, int w) const {
        for (const Point2& p : points)
            if (p.x < 0.0 || p.y < 0.0 || p.x >= w || p.y >= h)
                throw RangeError("landmark outside image bounds");
    }
};

namespace geom {

inline double cross(const Point2& o, const Point2& a, const Point2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Andrew monotone chain; returns hull in counter-clockwise order.
inline std::vector<Point2> convex_hull(std::vector<Point2> pts) {
    std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Point2& a, const Point2& b) {
                              return a.x == b.x && a.y == b.y;
                          }),
              pts.end());
    const size_t n = pts.size();
    if (n < 3) return pts;
    std::vector<Point2> hull(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    const size_t lower = k + 1;
    for (size_t i = n - 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

inline double polygon_area(const std::vector<Point2>& poly) {
    double a = 0.0;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Point2& p = poly[i];
        const Point2& q = poly[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * std::abs(a);
}

/// Even-odd scanline fill at pixel centers.
inline void fill_polygon(const std::vector<Point2>& poly, ComponentMask& mask) {
    const size_t n = poly.size();
    if (n < 3) return;
    double ymin = poly[0].y, ymax = poly[0].y, xmin = poly[0].x, xmax = poly[0].x;
    for (const Point2& p : poly) {
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
    }
    const int y0 = std::max(0, static_cast<int>(std::floor(ymin)));
    const int y1 = std::min(mask.h - 1, static_cast<int>(std::ceil(ymax)));
    for (int y = y0; y <= y1; ++y) {
        const double cy = y + 0.5;
        std::vector<double> xs;
        for (size_t i = 0; i < n; ++i) {
            const Point2& p = poly[i];
            const Point2& q = poly[(i + 1) % n];
            if ((p.y <= cy && q.y > cy) || (q.y <= cy && p.y > cy)) {
                const double t = (cy - p.y) / (q.y - p.y);
                xs.push_back(p.x + t * (q.x - p.x));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (size_t i = 0; i + 1 < xs.size(); i += 2) {
            const int xa = std::max(0, static_cast<int>(std::ceil(xs[i] - 0.5)));
            const int xb = std::min(mask.w - 1, static_cast<int>(std::floor(xs[i + 1] - 0.5)));
            for (int x = xa; x <= xb; ++x) mask.set(y, x, true);
        }
    }
}

inline double dist_point_segment(double px, double py, const Point2& a, const Point2& b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

/// Marks every pixel whose center lies within `radius` of the polyline.
inline void dilate_polyline(const std::vector<Point2>& pts, double radius, ComponentMask& mask) {
    if (pts.size() < 2) return;
    double ymin = pts[0].y, ymax = pts[0].y, xmin = pts[0].x, xmax = pts[0].x;
    for (const Point2& p : pts) {
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
    }
    const int y0 = std::max(0, static_cast<int>(std::floor(ymin - radius)));
    const int y1 = std::min(mask.h - 1, static_cast<int>(std::ceil(ymax + radius)));
    const int x0 = std::max(0, static_cast<int>(std::floor(xmin - radius)));
    const int x1 = std::min(mask.w - 1, static_cast<int>(std::ceil(xmax + radius)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double cx = x + 0.5, cy = y + 0.5;
            for (size_t i = 0; i + 1 < pts.size(); ++i)
                if (dist_point_segment(cx, cy, pts[i], pts[i + 1]) <= radius) {
                    mask.set(y, x, true);
                    break;
                }
        }
}

}  // namespace geom

// ---------------------------------------------------------------------------
// masks_from_landmarks
// ---------------------------------------------------------------------------

/// Brow dilation radius: 2 px at the 128x128 reference, scaled with H.
inline double brow_dilation_radius(int h) { return std::max(1.0, 2.0 * h / 128.0); }

/// Derives the five component masks from a landmark set. Foreground masks are
/// polygon fills (brows: dilated polylines); skin is the convex hull of all
/// landmarks minus the four foreground masks, so skin is disjoint from each
/// foreground by construction. Degenerate shapes yield all-false masks
/// flagged as detection failures.
inline MaskSet masks_from_landmarks(const LandmarkSet& lm, int h, int w) {
    lm.validate(h, w);
    MaskSet out;
    for (Component c : kComponents) out.emplace(c, ComponentMask(c, h, w));

    auto pts = [&](int a, int b) {  // inclusive range
        std::vector<Point2> v;
        for (int i = a; i <= b; ++i) v.push_back(lm.points[static_cast<size_t>(i)]);
        return v;
    };

    // Globally degenerate configuration: no usable face region at all.
    std::vector<Point2> all(lm.points.begin(), lm.points.end());
    const std::vector<Point2> hull = geom::convex_hull(all);
    if (hull.size() < 3 || geom::polygon_area(hull) < 1.0) {
        for (auto& [c, m] : out) m.detection_failure = true;
        return out;
    }

    ComponentMask& brows = out.at(Component::eyebrows);
    geom::dilate_polyline(pts(17, 21), brow_dilation_radius(h), brows);
    geom::dilate_polyline(pts(22, 26), brow_dilation_radius(h), brows);

    ComponentMask& eyes = out.at(Component::eyes);
    geom::fill_polygon(pts(36, 41), eyes);
    geom::fill_polygon(pts(42, 47), eyes);

    ComponentMask& nose = out.at(Component::nose);
    {
        std::vector<Point2> poly;
        poly.push_back(lm.points[27]);
        for (int i = 31; i <= 35; ++i) poly.push_back(lm.points[static_cast<size_t>(i)]);
        geom::fill_polygon(poly, nose);
    }

    ComponentMask& mouth = out.at(Component::mouth);
    geom::fill_polygon(pts(48, 59), mouth);

    ComponentMask& skin = out.at(Component::skin);
    geom::fill_polygon(hull, skin);
    for (Component c : kForegroundComponents) {
        const ComponentMask& fg = out.at(c);
        for (size_t i = 0; i < skin.bits.size(); ++i)
            if (fg.bits[i]) skin.bits[i] = 0;
    }

    for (auto& [c, m] : out)
        if (m.popcount() == 0) m.detection_failure = true;
    return out;
}

/// Splits an image into the five zeroed-background layers plus the panorama.
inline LayerBundle make_layer_bundle(const FaceImage& image, const MaskSet& masks) {
    LayerBundle b;
    for (Component c : kComponents) {
        auto it = masks.find(c);
        if (it == masks.end())
            throw ArityError(std::string("make_layer_bundle: missing ") + component_name(c));
        b.masks[c] = it->second;
        b.layers[c] = apply_mask(image, it->second);
    }
    b.panorama = image;
    b.validate();
    return b;
}

// ---------------------------------------------------------------------------
// Synthetic faces with exact ground truth
// ---------------------------------------------------------------------------

/// Identity geometry/color plus per-image jitter, all derived from seeds.
/// Same identity_seed => same geometry before jitter.
struct SyntheticFaceSpec {
    uint64_t identity_seed = 0;
    uint64_t image_index = 0;   // selects the jitter draw
    double geom_jitter = 0.02;  // fraction of image size
    double color_jitter = 0.06;
};

namespace detail {

struct FaceGeometry {
    // positions in unit coordinates, sizes as fractions of image side
    double cx, cy;            // face center
    double ax, ay;            // face half axes
    double eye_dx, eye_y;     // eye centers: (cx +- eye_dx, eye_y)
    double eye_w, eye_h;      // eye half axes
    double brow_y, brow_len, brow_arch;
    double nose_w, nose_top_y, nose_base_y;
    double mouth_y, mouth_w, mouth_h, mouth_curve;
    // colors in [0,1]
    double skin[3], brow[3], eye[3], mouth_c[3], bg_top[3], bg_bot[3];
    double texture_freq, texture_phase, texture_amp;
};

inline double jit(Rng& r, double lo, double hi) { return r.uniform(lo, hi); }

inline FaceGeometry face_geometry(const SyntheticFaceSpec& spec) {
    Rng id(Rng(spec.identity_seed).fork("identity").next_u64());
    FaceGeometry g{};
    g.cx = jit(id, 0.47, 0.53);
    g.cy = jit(id, 0.49, 0.55);
    g.ax = jit(id, 0.30, 0.38);
    g.ay = jit(id, 0.36, 0.43);
    g.eye_dx = g.ax * jit(id, 0.38, 0.52);
    g.eye_y = g.cy - g.ay * jit(id, 0.18, 0.30);
    g.eye_w = g.ax * jit(id, 0.14, 0.20);
    g.eye_h = g.eye_w * jit(id, 0.45, 0.65);
    g.brow_y = g.eye_y - g.eye_h - g.ay * jit(id, 0.10, 0.16);
    g.brow_len = g.eye_w * jit(id, 1.1, 1.5);
    g.brow_arch = g.ay * jit(id, 0.015, 0.05);
    g.nose_w = g.ax * jit(id, 0.16, 0.26);
    g.nose_top_y = g.eye_y + g.eye_h * 1.2;
    g.nose_base_y = g.cy + g.ay * jit(id, 0.10, 0.18);
    g.mouth_y = g.cy + g.ay * jit(id, 0.42, 0.55);
    g.mouth_w = g.ax * jit(id, 0.34, 0.50);
    g.mouth_h = g.ay * jit(id, 0.055, 0.095);
    g.mouth_curve = jit(id, -0.3, 0.5);
    for (int c = 0; c < 3; ++c) {
        static const double skin_base[3] = {0.78, 0.62, 0.50};
        g.skin[c] = std::clamp(skin_base[c] + jit(id, -0.22, 0.18), 0.12, 0.95);
        g.brow[c] = std::clamp(0.22 + jit(id, -0.15, 0.25), 0.02, 0.6);
        g.eye[c] = std::clamp((c == 2 ? 0.45 : 0.25) + jit(id, -0.2, 0.35), 0.02, 0.9);
        g.mouth_c[c] = std::clamp((c == 0 ? 0.65 : 0.25) + jit(id, -0.18, 0.25), 0.05, 0.95);
        g.bg_top[c] = std::clamp(0.5 + jit(id, -0.4, 0.4), 0.03, 0.97);
        g.bg_bot[c] = std::clamp(0.5 + jit(id, -0.4, 0.4), 0.03, 0.97);
    }
    g.texture_freq = jit(id, 2.0, 7.0);
    g.texture_phase = jit(id, 0.0, 6.28);
    g.texture_amp = jit(id, 0.01, 0.045);

    // bounded per-image jitter on pose and color
    Rng jr(Rng(spec.identity_seed).fork("jitter" + std::to_string(spec.image_index)).next_u64());
    const double t = spec.geom_jitter;
    g.cx += jit(jr, -t, t);
    g.cy += jit(jr, -t, t);
    const double s = 1.0 + jit(jr, -t, t);
    g.ax *= s;
    g.ay *= s;
    g.eye_dx *= s;
    g.eye_w *= s;
    g.eye_h *= s;
    g.mouth_w *= s;
    const double ct = spec.color_jitter;
    for (int c = 0; c < 3; ++c) {
        g.skin[c] = std::clamp(g.skin[c] + jit(jr, -ct, ct), 0.02, 0.98);
        g.bg_top[c] = std::clamp(g.bg_top[c] + jit(jr, -ct, ct), 0.02, 0.98);
        g.bg_bot[c] = std::clamp(g.bg_bot[c] + jit(jr, -ct, ct), 0.02, 0.98);
    }
    return g;
}

/// Landmark placement. Pixel-space minimum sizes keep every polygon
/// non-degenerate down to H = 32.
inline LandmarkSet place_landmarks(const FaceGeometry& g, int h) {
    LandmarkSet lm;
    const double H = h;
    auto P = [&](int i, double x, double y) {
        lm.points[static_cast<size_t>(i)] = {std::clamp(x * H, 1.0, H - 2.0),
                                             std::clamp(y * H, 1.0, H - 2.0)};
    };
    const double pi = 3.14159265358979323846;

    // jaw: left temple -> chin -> right temple on the face ellipse
    for (int i = 0; i <= 16; ++i) {
        const double phi = pi - i * (pi / 16.0);
        P(i, g.cx + g.ax * std::cos(phi), g.cy + g.ay * std::sin(phi));
    }

    const double min_px = 1.0 / H;
    const double eye_w = std::max(g.eye_w, 2.4 * min_px);
    const double eye_h = std::max(g.eye_h, 1.6 * min_px);
    const double brow_half = std::max(g.brow_len, 3.0 * min_px) * 0.5;

    // brows 17-21 / 22-26, arched polylines above each eye
    for (int side = 0; side < 2; ++side) {
        const double ex = side == 0 ? g.cx - g.eye_dx : g.cx + g.eye_dx;
        for (int k = 0; k < 5; ++k) {
            const double u = k / 4.0;
            const double x = ex - brow_half + 2.0 * brow_half * u;
            const double y = g.brow_y - g.brow_arch * std::sin(pi * u);
            P(17 + side * 5 + k, x, y);
        }
    }

    // nose bridge 27-30 and base 31-35
    const double nose_w = std::max(g.nose_w, 2.5 * min_px);
    for (int k = 0; k < 4; ++k) {
        const double u = k / 3.0;
        P(27 + k, g.cx, g.nose_top_y + (g.nose_base_y - g.nose_top_y) * u);
    }
    for (int k = 0; k < 5; ++k) {
        const double u = k / 4.0;
        const double x = g.cx - nose_w * 0.5 + nose_w * u;
        const double y = g.nose_base_y + 1.5 * min_px * std::sin(pi * u);
        P(31 + k, x, y);
    }

    // eyes 36-41 / 42-47, hexagons on ellipses
    for (int side = 0; side < 2; ++side) {
        const double ex = side == 0 ? g.cx - g.eye_dx : g.cx + g.eye_dx;
        static const double ang[6] = {180.0, 120.0, 60.0, 0.0, 300.0, 240.0};
        for (int k = 0; k < 6; ++k) {
            const double a = ang[k] * pi / 180.0;
            P(36 + side * 6 + k, ex + eye_w * std::cos(a), g.eye_y - eye_h * std::sin(a));
        }
    }

    // mouth: outer lip 48-59 on an ellipse, inner lip 60-67 scaled down
    const double mw = std::max(g.mouth_w, 3.0 * min_px);
    const double mh = std::max(g.mouth_h, 2.0 * min_px);
    for (int k = 0; k < 12; ++k) {
        const double a = pi - k * (2.0 * pi / 12.0);
        const double x = g.cx + mw * std::cos(a);
        const double y = g.mouth_y - mh * std::sin(a) + g.mouth_curve * mh * std::cos(a) * std::cos(a);
        P(48 + k, x, y);
    }
    for (int k = 0; k < 8; ++k) {
        const double a = pi - k * (2.0 * pi / 8.0);
        P(60 + k, g.cx + 0.55 * mw * std::cos(a), g.mouth_y - 0.45 * mh * std::sin(a));
    }
    return lm;
}

inline void paint_face(const FaceGeometry& g, const MaskSet& masks, int h, Tensor& px) {
    px = Tensor({3, h, h});
    const ComponentMask& skin = masks.at(Component::skin);
    const ComponentMask& brows = masks.at(Component::eyebrows);
    const ComponentMask& eyes = masks.at(Component::eyes);
    const ComponentMask& nose = masks.at(Component::nose);
    const ComponentMask& mouth = masks.at(Component::mouth);
    const double pi2 = 6.283185307179586;
    for (int y = 0; y < h; ++y) {
        const double v = static_cast<double>(y) / (h - 1);
        for (int x = 0; x < h; ++x) {
            double col[3];
            for (int c = 0; c < 3; ++c) col[c] = g.bg_top[c] + (g.bg_bot[c] - g.bg_top[c]) * v;
            if (skin.at(y, x) || nose.at(y, x)) {
                const double tex = g.texture_amp * std::sin(pi2 * (v * g.texture_freq) + g.texture_phase);
                const double shade = nose.at(y, x) ? -0.08 : 0.0;
                for (int c = 0; c < 3; ++c) col[c] = g.skin[c] + tex + shade;
            }
            if (brows.at(y, x))
                for (int c = 0; c < 3; ++c) col[c] = g.brow[c];
            if (eyes.at(y, x)) {
                // darker toward the eye center line
                const double ex = std::min(std::abs(x / static_cast<double>(h) - (g.cx - g.eye_dx)),
                                           std::abs(x / static_cast<double>(h) - (g.cx + g.eye_dx)));
                const double iris = ex < g.eye_w * 0.4 ? -0.25 : 0.25;
                for (int c = 0; c < 3; ++c) col[c] = g.eye[c] + iris;
            }
            if (mouth.at(y, x))
                for (int c = 0; c < 3; ++c) col[c] = g.mouth_c[c];
            for (int c = 0; c < 3; ++c)
                px.at(c, y, x) = static_cast<float>(std::clamp(col[c] * 2.0 - 1.0, -1.0, 1.0));
        }
    }
}

}  // namespace detail

struct SyntheticFace {
    FaceImage image;
    LayerBundle bundle;
    LandmarkSet landmarks;
    std::string subject_id;
};

/// Deterministic toy face with exact ground truth. The ground-truth masks
/// come from masks_from_landmarks on the generated landmarks, and the image
/// is painted inside those masks, so a landmark round-trip reproduces the
/// masks bit for bit.
inline SyntheticFace generate_synthetic_face(const SyntheticFaceSpec& spec, int h) {
    if (!is_power_of_two(h) || h < 32)
        throw DimensionError("synthetic face side must be a power of two >= 32");
    SyntheticFace out;
    const detail::FaceGeometry g = detail::face_geometry(spec);
    out.landmarks = detail::place_landmarks(g, h);
    MaskSet masks = masks_from_landmarks(out.landmarks, h, h);
    Tensor px;
    detail::paint_face(g, masks, h, px);
    out.image = validate_face_image(px);
    out.bundle = make_layer_bundle(out.image, masks);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "subj_%05llu",
                  static_cast<unsigned long long>(spec.identity_seed));
    out.subject_id = buf;
    return out;
}

}  // namespace lbfti

#endif  // LBFTI_MASKS_HPP_
