#ifndef LBFTI_IO_CHECKPOINT_HPP_
#define LBFTI_IO_CHECKPOINT_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lbfti/core/tensor.hpp"
#include "lbfti/errors.hpp"
#include "lbfti/nn/layers.hpp"

namespace lbfti::io {

// Single-archive checkpoint: a JSON manifest followed by named parameter
// blobs (including batch-norm running statistics), little-endian float32.
// Loading matches blobs to an already-constructed module by name and shape
// and reports the first mismatching entry.

inline constexpr char kCkptMagic[8] = {'L', 'B', 'F', 'T', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCkptVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("checkpoint truncated");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const nlohmann::json& manifest,
                            const std::vector<nn::Param*>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kCkptMagic, 8);
    detail::write_pod(os, kCkptVersion);
    const std::string m = manifest.dump();
    detail::write_pod(os, static_cast<uint64_t>(m.size()));
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    detail::write_pod(os, static_cast<uint64_t>(params.size()));
    for (const nn::Param* p : params) {
        detail::write_pod(os, static_cast<uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        detail::write_pod(os, static_cast<uint32_t>(p->value.rank()));
        for (int i = 0; i < p->value.rank(); ++i) detail::write_pod(os, static_cast<int32_t>(p->value.dim(i)));
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

inline nlohmann::json read_checkpoint_manifest(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw FormatError("not a checkpoint file (bad magic)");
    const uint32_t ver = detail::read_pod<uint32_t>(is);
    if (ver != kCkptVersion) throw FormatError("unsupported checkpoint version");
    const uint64_t mlen = detail::read_pod<uint64_t>(is);
    std::string m(mlen, '\0');
    is.read(m.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw FormatError("checkpoint truncated in manifest");
    nlohmann::json j = nlohmann::json::parse(m, nullptr, false);
    if (j.is_discarded()) throw FormatError("checkpoint manifest is not valid JSON");
    return j;
}

inline nlohmann::json load_checkpoint_manifest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    return read_checkpoint_manifest(is);
}

/// Loads blobs into `params`; every archive entry must match a parameter by
/// name, and every parameter must be filled exactly once.
inline nlohmann::json load_checkpoint(const std::string& path,
                                      const std::vector<nn::Param*>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json manifest = read_checkpoint_manifest(is);

    std::map<std::string, nn::Param*> by_name;
    for (nn::Param* p : params) by_name[p->name] = p;
    std::map<std::string, bool> filled;

    const uint64_t n = detail::read_pod<uint64_t>(is);
    for (uint64_t k = 0; k < n; ++k) {
        const uint32_t nlen = detail::read_pod<uint32_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const uint32_t rank = detail::read_pod<uint32_t>(is);
        if (rank > 8) throw FormatError("corrupt blob header at " + name);
        std::vector<int> shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = detail::read_pod<int32_t>(is);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("unexpected parameter in checkpoint: " + name);
        nn::Param* p = it->second;
        if (p->value.shape() != shape)
            throw DimensionError("checkpoint shape mismatch at " + name + ": file " +
                                 Tensor(shape).shape_str() + " vs model " + p->value.shape_str());
        is.read(reinterpret_cast<char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(float)));
        if (!is) throw FormatError("checkpoint truncated at " + name);
        filled[name] = true;
    }
    for (nn::Param* p : params)
        if (!filled.count(p->name)) throw FormatError("checkpoint missing parameter: " + p->name);
    return manifest;
}

}  // namespace lbfti::io

#endif  // LBFTI_IO_CHECKPOINT_HPP_
