#pragma once
// rng.hpp
//
// Counter-based deterministic RNG.  Every random quantity in the pipeline is
// a pure function of (key, counter), so results are reproducible across
// platforms and independent of evaluation order or thread count.  Sub-streams
// are derived with derive_key so e.g. layer 1 of a 3-layer rain field equals
// layer 1 of a 1-layer field under the same seed.

#include <cmath>
#include <cstdint>

namespace nightforge {

// SplitMix64 finalizer: bijective 64-bit mix with full avalanche.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_key(std::uint64_t key, std::uint64_t stream) {
    return mix64(key ^ mix64(stream + 0x9E3779B97F4A7C15ull));
}

class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64() {
        ++counter_;
        return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ull);
    }

    // uniform in the open interval (0,1); never returns an exact endpoint,
    // so log() and Box-Muller stay finite
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01(), u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stateless lattice hash for procedural noise: one value per integer site.
inline double hash_unit(std::uint64_t key, std::int64_t x, std::int64_t y) {
    std::uint64_t h = key;
    h = mix64(h ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull));
    h = mix64(h ^ (static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4Full));
    return (static_cast<double>(h >> 11) + 0.5) * 0x1p-53;
}

}  // namespace nightforge
