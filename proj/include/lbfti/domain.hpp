#ifndef LBFTI_DOMAIN_HPP_
#define LBFTI_DOMAIN_HPP_

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lbfti/core/tensor.hpp"
#include "lbfti/errors.hpp"

namespace lbfti {

/// The five supervision components: four foreground attribute classes plus
/// the midground skin region. Eyebrows and eyes each cover both the left and
/// right instance.
enum class Component { eyebrows, eyes, nose, mouth, skin };

inline constexpr std::array<Component, 5> kComponents = {
    Component::eyebrows, Component::eyes, Component::nose, Component::mouth, Component::skin};

inline constexpr std::array<Component, 4> kForegroundComponents = {
    Component::eyebrows, Component::eyes, Component::nose, Component::mouth};

inline const char* component_name(Component c) {
    switch (c) {
        case Component::eyebrows: return "eyebrows";
        case Component::eyes: return "eyes";
        case Component::nose: return "nose";
        case Component::mouth: return "mouth";
        case Component::skin: return "skin";
    }
    return "?";
}

inline Component component_from_name(const std::string& s) {
    for (Component c : kComponents)
        if (s == component_name(c)) return c;
    throw FormatError("unknown component name: " + s);
}

inline bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

/// A color face image with pixels in [-1, 1], stored channel-first {3,H,W}.
/// Square, H a power of two >= 32 (128 in the reference configuration).
struct FaceImage {
    Tensor pixels;  // {3, H, W}

    FaceImage() = default;
    explicit FaceImage(Tensor t) : pixels(std::move(t)) {}

    int height() const { return pixels.dim(1); }
    int width() const { return pixels.dim(2); }

    float at(int y, int x, int c) const { return pixels.at(c, y, x); }
    float& at(int y, int x, int c) { return pixels.at(c, y, x); }
};

/// Validates shape and range and returns the image. Shape must be {3,H,H}
/// with H a power of two >= 32; every entry must lie in [-1, 1].
inline FaceImage validate_face_image(const Tensor& pixels) {
    if (pixels.rank() != 3 || pixels.dim(0) != 3)
        throw DimensionError("face image must be {3,H,W}, got " + pixels.shape_str());
    const int h = pixels.dim(1), w = pixels.dim(2);
    if (h != w) throw DimensionError("face image must be square, got " + pixels.shape_str());
    if (!is_power_of_two(h) || h < 32)
        throw DimensionError("face image side must be a power of two >= 32, got " +
                             std::to_string(h));
    for (int64_t i = 0; i < pixels.size(); ++i) {
        const float v = pixels[i];
        if (!(v >= -1.0f && v <= 1.0f))
            throw RangeError("pixel value " + std::to_string(v) + " outside [-1,1]");
    }
    return FaceImage(pixels);
}

/// d-dimensional identity embedding.
struct FacialTemplate {
    Tensor values;  // {d}

    FacialTemplate() = default;
    explicit FacialTemplate(Tensor t) : values(std::move(t)) {
        if (values.rank() != 1) throw DimensionError("template must be a vector");
        if (!values.all_finite()) throw NumericError("template has non-finite entries");
    }

    int d() const { return values.dim(0); }
};

/// Boolean mask for one component. All-false is legal only as an explicit
/// detection failure.
struct ComponentMask {
    Component component = Component::skin;
    std::vector<uint8_t> bits;  // row-major H*W
    int h = 0, w = 0;
    bool detection_failure = false;

    ComponentMask() = default;
    ComponentMask(Component c, int height, int width)
        : component(c), bits(static_cast<size_t>(height) * width, 0), h(height), w(width) {}

    bool at(int y, int x) const { return bits[static_cast<size_t>(y) * w + x] != 0; }
    void set(int y, int x, bool v) { bits[static_cast<size_t>(y) * w + x] = v ? 1 : 0; }

    int64_t popcount() const {
        int64_t n = 0;
        for (uint8_t b : bits) n += b;
        return n;
    }

    bool disjoint_with(const ComponentMask& o) const {
        if (h != o.h || w != o.w) throw DimensionError("mask size mismatch");
        for (size_t i = 0; i < bits.size(); ++i)
            if (bits[i] && o.bits[i]) return false;
        return true;
    }
};

using MaskSet = std::map<Component, ComponentMask>;

/// Zeroes image pixels outside the mask. Pure; idempotent.
inline FaceImage apply_mask(const FaceImage& image, const ComponentMask& mask) {
    if (image.height() != mask.h || image.width() != mask.w)
        throw DimensionError("apply_mask: image " + image.pixels.shape_str() + " vs mask " +
                             std::to_string(mask.h) + "x" + std::to_string(mask.w));
    FaceImage out(Tensor(image.pixels.shape()));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < mask.h; ++y)
            for (int x = 0; x < mask.w; ++x)
                out.pixels.at(c, y, x) = mask.at(y, x) ? image.pixels.at(c, y, x) : 0.0f;
    return out;
}

/// The five masked layer targets (background zeroed) plus the full panorama
/// target for one face.
struct LayerBundle {
    std::map<Component, FaceImage> layers;
    MaskSet masks;
    FaceImage panorama;

    /// Checks structural invariants: exactly the five components, layers
    /// exactly zero outside their masks, skin disjoint from each foreground.
    void validate() const {
        if (layers.size() != kComponents.size() || masks.size() != kComponents.size())
            throw ArityError("layer bundle must carry exactly the five components");
        for (Component c : kComponents) {
            auto li = layers.find(c);
            auto mi = masks.find(c);
            if (li == layers.end() || mi == masks.end())
                throw ArityError(std::string("missing component ") + component_name(c));
            const FaceImage& img = li->second;
            const ComponentMask& m = mi->second;
            for (int ch = 0; ch < 3; ++ch)
                for (int y = 0; y < m.h; ++y)
                    for (int x = 0; x < m.w; ++x)
                        if (!m.at(y, x) && img.pixels.at(ch, y, x) != 0.0f)
                            throw RangeError(std::string("layer ") + component_name(c) +
                                             " nonzero outside its mask");
        }
        const ComponentMask& skin = masks.at(Component::skin);
        for (Component c : kForegroundComponents)
            if (!skin.disjoint_with(masks.at(c)))
                throw RangeError(std::string("skin mask overlaps ") + component_name(c));
    }
};

/// 40 attribute probabilities in [0, 1].
struct AttributeVector {
    Tensor probs;  // {40}

    AttributeVector() = default;
    explicit AttributeVector(Tensor t) : probs(std::move(t)) {
        if (probs.rank() != 1 || probs.dim(0) != 40)
            throw DimensionError("attribute vector must have 40 entries");
        for (int64_t i = 0; i < probs.size(); ++i)
            if (!(probs[i] >= 0.0f && probs[i] <= 1.0f))
                throw RangeError("attribute probability outside [0,1]");
    }
};

/// One subject and its dataset images, used for Type-I/Type-II pairing.
struct SubjectRecord {
    std::string subject_id;
    std::vector<std::string> image_refs;

    void validate() const {
        if (image_refs.empty()) throw DataError("subject " + subject_id + " has no images");
        for (size_t i = 0; i < image_refs.size(); ++i)
            for (size_t j = i + 1; j < image_refs.size(); ++j)
                if (image_refs[i] == image_refs[j])
                    throw DataError("duplicate image ref in subject " + subject_id);
    }
};

}  // namespace lbfti

#endif  // LBFTI_DOMAIN_HPP_
