#ifndef LBFTI_IO_RECORDS_HPP_
#define LBFTI_IO_RECORDS_HPP_

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lbfti/core/tensor.hpp"
#include "lbfti/domain.hpp"
#include "lbfti/errors.hpp"
#include "lbfti/masks.hpp"

namespace lbfti::io {

// ---------------------------------------------------------------------------
// Dataset manifest: line-delimited JSON records
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string image_path;
    std::string subject_id;
    std::string split;  // "train" or "test"
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split(const std::string& which) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == which) out.push_back(e);
        return out;
    }
};

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest: " + path);
    for (const auto& e : m.entries) {
        nlohmann::json j = {{"image_path", e.image_path},
                            {"subject_id", e.subject_id},
                            {"split", e.split}};
        os << j.dump() << "\n";
    }
}

/// Loads and validates: paths must exist, subjects must be non-empty, split
/// must be train or test.
inline DatasetManifest load_manifest(const std::string& path, bool check_paths = true) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read manifest: " + path);
    DatasetManifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw FormatError("manifest line " + std::to_string(lineno) + " is not valid JSON");
        ManifestEntry e;
        e.image_path = j.at("image_path").get<std::string>();
        e.subject_id = j.at("subject_id").get<std::string>();
        e.split = j.at("split").get<std::string>();
        if (e.subject_id.empty())
            throw DataError("manifest line " + std::to_string(lineno) + ": empty subject_id");
        if (e.split != "train" && e.split != "test")
            throw DataError("manifest line " + std::to_string(lineno) + ": split must be train|test");
        if (check_paths && !std::filesystem::exists(e.image_path))
            throw DataError("manifest line " + std::to_string(lineno) + ": missing file " +
                            e.image_path);
        m.entries.push_back(std::move(e));
    }
    return m;
}

/// Mask sidecar path convention: face_0001.ppm -> face_0001_mask.pgm.
inline std::string mask_sidecar_path(const std::string& image_path) {
    const std::filesystem::path p(image_path);
    std::filesystem::path q = p;
    q.replace_filename(p.stem().string() + "_mask.pgm");
    return q.string();
}

inline std::string landmark_sidecar_path(const std::string& image_path) {
    const std::filesystem::path p(image_path);
    std::filesystem::path q = p;
    q.replace_filename(p.stem().string() + "_landmarks.json");
    return q.string();
}

// ---------------------------------------------------------------------------
// Templates file: one JSON record per line, vector as base64 of f32 LE
// ---------------------------------------------------------------------------

namespace b64 {

inline const char* alphabet() {
    return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string encode(const uint8_t* data, size_t n) {
    const char* tab = alphabet();
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (size_t i = 0; i < n; i += 3) {
        uint32_t v = static_cast<uint32_t>(data[i]) << 16;
        if (i + 1 < n) v |= static_cast<uint32_t>(data[i + 1]) << 8;
        if (i + 2 < n) v |= data[i + 2];
        out.push_back(tab[(v >> 18) & 63]);
        out.push_back(tab[(v >> 12) & 63]);
        out.push_back(i + 1 < n ? tab[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < n ? tab[v & 63] : '=');
    }
    return out;
}

inline std::vector<uint8_t> decode(const std::string& s) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        if (c == '=') return -1;
        throw FormatError("invalid base64 character");
    };
    if (s.size() % 4 != 0) throw FormatError("base64 length not a multiple of 4");
    std::vector<uint8_t> out;
    for (size_t i = 0; i < s.size(); i += 4) {
        const int a = val(s[i]), b = val(s[i + 1]), c = val(s[i + 2]), d = val(s[i + 3]);
        if (a < 0 || b < 0) throw FormatError("malformed base64 block");
        out.push_back(static_cast<uint8_t>((a << 2) | (b >> 4)));
        if (c >= 0) out.push_back(static_cast<uint8_t>(((b & 15) << 4) | (c >> 2)));
        if (d >= 0) out.push_back(static_cast<uint8_t>(((c & 3) << 6) | d));
    }
    return out;
}

}  // namespace b64

struct TemplateRecord {
    std::string id;
    FacialTemplate tmpl;
};

inline void save_templates(const std::string& path, const std::vector<TemplateRecord>& recs) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write templates file: " + path);
    for (const auto& r : recs) {
        // bit-exact: little-endian float32 bytes
        std::vector<uint8_t> bytes(static_cast<size_t>(r.tmpl.d()) * 4);
        std::memcpy(bytes.data(), r.tmpl.values.data(), bytes.size());
        nlohmann::json j = {{"id", r.id}, {"t", b64::encode(bytes.data(), bytes.size())}};
        os << j.dump() << "\n";
    }
}

inline std::vector<TemplateRecord> load_templates(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read templates file: " + path);
    std::vector<TemplateRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw FormatError("templates line " + std::to_string(lineno) + " is not valid JSON");
        const std::vector<uint8_t> bytes = b64::decode(j.at("t").get<std::string>());
        if (bytes.size() % 4 != 0)
            throw FormatError("templates line " + std::to_string(lineno) + ": byte count not f32");
        Tensor v({static_cast<int>(bytes.size() / 4)});
        std::memcpy(v.data(), bytes.data(), bytes.size());
        out.push_back({j.at("id").get<std::string>(), FacialTemplate(v)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pair lists (external scoring interchange)
// ---------------------------------------------------------------------------

struct PairRecord {
    std::string pair_id;
    std::string path_a;
    std::string path_b;
    std::string label;  // "genuine" or "impostor"
};

inline void save_pairs(const std::string& path, const std::vector<PairRecord>& pairs) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write pair list: " + path);
    for (const auto& p : pairs) {
        nlohmann::json j = {{"pair_id", p.pair_id},
                            {"path_a", p.path_a},
                            {"path_b", p.path_b},
                            {"label", p.label}};
        os << j.dump() << "\n";
    }
}

inline std::vector<PairRecord> load_pairs(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read pair list: " + path);
    std::vector<PairRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw FormatError("pair list: invalid JSON line");
        out.push_back({j.at("pair_id").get<std::string>(), j.at("path_a").get<std::string>(),
                       j.at("path_b").get<std::string>(), j.at("label").get<std::string>()});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Landmark detector plug-in contract: image file -> 68 [x, y] pairs as JSON
// ---------------------------------------------------------------------------

inline void save_landmarks_json(const std::string& path, const LandmarkSet& lm) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Point2& p : lm.points) arr.push_back({p.x, p.y});
    std::ofstream os(path);
    if (!os) throw IoError("cannot write landmarks: " + path);
    os << arr.dump() << "\n";
}

inline LandmarkSet load_landmarks_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read landmarks: " + path);
    nlohmann::json arr = nlohmann::json::parse(is, nullptr, false);
    if (arr.is_discarded() || !arr.is_array() || arr.size() != 68)
        throw FormatError("landmark file must be a JSON array of 68 [x,y] pairs: " + path);
    LandmarkSet lm;
    for (size_t i = 0; i < 68; ++i) {
        if (!arr[i].is_array() || arr[i].size() != 2)
            throw FormatError("landmark entry " + std::to_string(i) + " malformed in " + path);
        lm.points[i] = {arr[i][0].get<double>(), arr[i][1].get<double>()};
    }
    return lm;
}

}  // namespace lbfti::io

#endif  // LBFTI_IO_RECORDS_HPP_
