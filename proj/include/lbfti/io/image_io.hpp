#ifndef LBFTI_IO_IMAGE_IO_HPP_
#define LBFTI_IO_IMAGE_IO_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "lbfti/domain.hpp"
#include "lbfti/errors.hpp"

namespace lbfti::io {

// Binary PPM/PGM: lossless 8-bit interchange, no external codecs. Pixels map
// [0,255] <-> [-1,1] via x = q/127.5 - 1 and q = round((x+1)*127.5).

inline uint8_t to_byte(float v) {
    const double q = std::lround((static_cast<double>(v) + 1.0) * 127.5);
    return static_cast<uint8_t>(std::clamp(q, 0.0, 255.0));
}

inline float from_byte(uint8_t q) { return static_cast<float>(q / 127.5 - 1.0); }

inline void write_ppm(const std::string& path, const FaceImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write image: " + path);
    const int h = img.height(), w = img.width();
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = to_byte(img.at(y, x, c));
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("short write: " + path);
}

namespace detail {

inline void skip_ws_comments(std::istream& is) {
    while (true) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            return;
        }
    }
}

inline int read_pnm_int(std::istream& is) {
    skip_ws_comments(is);
    int v = -1;
    is >> v;
    if (!is || v < 0) throw FormatError("bad PNM header field");
    return v;
}

}  // namespace detail

inline FaceImage read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read image: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw FormatError("not a binary PPM: " + path);
    const int w = detail::read_pnm_int(is);
    const int h = detail::read_pnm_int(is);
    const int maxval = detail::read_pnm_int(is);
    if (maxval != 255) throw FormatError("unsupported PPM maxval in " + path);
    is.get();  // single whitespace after header
    Tensor px({3, h, w});
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!is) throw FormatError("truncated PPM: " + path);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) px.at(c, y, x) = from_byte(row[static_cast<size_t>(x) * 3 + c]);
    }
    return FaceImage(px);
}

// Mask sidecar: one PGM whose pixel value is a component bitmask
// (bit 0 eyebrows, 1 eyes, 2 nose, 3 mouth, 4 skin).

inline int component_bit(Component c) {
    switch (c) {
        case Component::eyebrows: return 0;
        case Component::eyes: return 1;
        case Component::nose: return 2;
        case Component::mouth: return 3;
        case Component::skin: return 4;
    }
    return 0;
}

inline void write_mask_pgm(const std::string& path, const MaskSet& masks) {
    const ComponentMask& first = masks.begin()->second;
    const int h = first.h, w = first.w;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write mask: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            uint8_t bits = 0;
            for (const auto& [c, m] : masks)
                if (m.at(y, x)) bits = static_cast<uint8_t>(bits | (1u << component_bit(c)));
            row[static_cast<size_t>(x)] = bits;
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("short write: " + path);
}

inline MaskSet read_mask_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read mask: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw FormatError("not a binary PGM: " + path);
    const int w = detail::read_pnm_int(is);
    const int h = detail::read_pnm_int(is);
    const int maxval = detail::read_pnm_int(is);
    if (maxval != 255) throw FormatError("unsupported PGM maxval in " + path);
    is.get();
    MaskSet out;
    for (Component c : kComponents) out.emplace(c, ComponentMask(c, h, w));
    std::vector<uint8_t> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!is) throw FormatError("truncated PGM: " + path);
        for (int x = 0; x < w; ++x)
            for (Component c : kComponents)
                out.at(c).set(y, x, (row[static_cast<size_t>(x)] >> component_bit(c)) & 1u);
    }
    for (auto& [c, m] : out)
        if (m.popcount() == 0) m.detection_failure = true;
    return out;
}

/// Side-by-side sheet of (original, reconstruction) rows.
inline void write_grid_sheet(const std::string& path, const std::vector<FaceImage>& originals,
                             const std::vector<FaceImage>& reconstructions) {
    if (originals.size() != reconstructions.size() || originals.empty())
        throw DimensionError("grid sheet needs matching non-empty image lists");
    const int h = originals[0].height(), w = originals[0].width();
    const int rows = static_cast<int>(originals.size());
    const int pad = 2;
    Tensor sheet({3, rows * (h + pad) - pad, 2 * w + pad});
    sheet.fill(1.0f);
    for (int r = 0; r < rows; ++r) {
        const int y0 = r * (h + pad);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) {
                    sheet.at(c, y0 + y, x) = originals[static_cast<size_t>(r)].at(y, x, c);
                    sheet.at(c, y0 + y, w + pad + x) =
                        reconstructions[static_cast<size_t>(r)].at(y, x, c);
                }
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write grid sheet: " + path);
    const int sh = sheet.dim(1), sw = sheet.dim(2);
    os << "P6\n" << sw << " " << sh << "\n255\n";
    for (int y = 0; y < sh; ++y)
        for (int x = 0; x < sw; ++x)
            for (int c = 0; c < 3; ++c) {
                const uint8_t b = to_byte(sheet.at(c, y, x));
                os.write(reinterpret_cast<const char*>(&b), 1);
            }
}

}  // namespace lbfti::io

#endif  // LBFTI_IO_IMAGE_IO_HPP_
