#pragma once

#include <cmath>
#include <cstdint>

namespace hdexpit {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from a root seed and up to three
/// branch indices. Used everywhere parallel work needs per-item rngs that
/// are independent of scheduling: hash(master, context, trial), etc.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a,
                                 std::uint64_t b = 0x53a6ed1c3f1a2bull,
                                 std::uint64_t c = 0x9d2c5680ull) {
    std::uint64_t s = root;
    std::uint64_t h = splitmix64(s);
    s ^= a * 0xff51afd7ed558ccdull;
    h ^= splitmix64(s);
    s ^= b * 0xc4ceb9fe1a85ec53ull;
    h ^= splitmix64(s);
    s ^= c * 0x2545f4914f6cdd1dull;
    h ^= splitmix64(s);
    return h;
}

/// Small deterministic generator (splitmix64 core). All randomness in the
/// project flows through this type so runs are bit-reproducible across
/// platforms; std:: distributions are implementation-defined and never used.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], inclusive.
    int uniform_int(int lo, int hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    /// Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = static_cast<double>((next_u64() >> 11) | 1ull) * 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    float normal_f() { return static_cast<float>(normal()); }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// FNV-1a over raw bytes; the project-wide content digest primitive.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace hdexpit
