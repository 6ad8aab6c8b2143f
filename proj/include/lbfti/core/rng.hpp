#ifndef LBFTI_CORE_RNG_HPP_
#define LBFTI_CORE_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <string>

namespace lbfti {

/// Deterministic splitmix64-based generator. Self-contained so that seeded
/// runs produce identical streams on every platform and standard library;
/// checkpoints written from the same seed are byte-identical.
class Rng {
public:
    explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n).
    uint64_t uniform_int(uint64_t n) { return n ? next_u64() % n : 0; }

    /// Standard normal via Box-Muller (no stdlib distribution, so the
    /// stream is implementation-independent).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Derive an independent child stream from this seed and a label.
    /// Used to give each network/module its own reproducible stream.
    Rng fork(const std::string& label) const {
        uint64_t h = 1469598103934665603ull;  // FNV-1a
        for (unsigned char c : label) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return Rng(state_ ^ h ^ 0xd1b54a32d192ed03ull);
    }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace lbfti

#endif  // LBFTI_CORE_RNG_HPP_
