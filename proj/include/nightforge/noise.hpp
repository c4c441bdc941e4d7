#pragma once
// noise.hpp
//
// Procedural value noise for weather fields.  A hashed integer lattice is
// interpolated with the quintic fade 6t^5-15t^4+10t^3 (C2 continuous, zero
// first and second derivative at the endpoints), and fbm stacks octaves at
// doubling frequency and halving amplitude, renormalized back into [0,1].

#include <cmath>
#include <cstdint>

#include "nightforge/image.hpp"
#include "nightforge/rng.hpp"

namespace nightforge {

inline double fade_quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

// smooth noise in [0,1] at continuous coordinates, lattice spacing 1
inline double value_noise(std::uint64_t key, double x, double y) {
    const double fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    const double tx = fade_quintic(x - fx), ty = fade_quintic(y - fy);
    const double v00 = hash_unit(key, ix, iy);
    const double v10 = hash_unit(key, ix + 1, iy);
    const double v01 = hash_unit(key, ix, iy + 1);
    const double v11 = hash_unit(key, ix + 1, iy + 1);
    const double a = v00 + (v10 - v00) * tx;
    const double b = v01 + (v11 - v01) * tx;
    return a + (b - a) * ty;
}

// fractal Brownian motion, result in [0,1]
inline double fbm(std::uint64_t key, double x, double y, int octaves, double base_freq) {
    if (octaves < 1) throw std::invalid_argument("fbm: octaves must be positive");
    double sum = 0.0, amp = 1.0, norm = 0.0, freq = base_freq;
    for (int o = 0; o < octaves; ++o) {
        sum += amp * value_noise(derive_key(key, static_cast<std::uint64_t>(o)), x * freq, y * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    return sum / norm;
}

// single-channel field of fbm noise over the pixel grid; base_freq is cycles
// per pixel, so e.g. 1/32 gives features roughly 32 px across
inline ImageBuffer noise_field(std::uint64_t key, int height, int width, int octaves,
                               double base_freq) {
    ImageBuffer out(height, width, 1);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            out.at(r, c, 0) = fbm(key, static_cast<double>(c), static_cast<double>(r), octaves,
                                  base_freq);
    return out;
}

// pseudo-depth in [0,1]: fbm blended toward the constant 0.5 as uniformity
// rises, so uniformity 1 means perfectly even atmosphere
inline ImageBuffer pseudo_depth(std::uint64_t key, int height, int width, double uniformity) {
    ImageBuffer d = noise_field(key, height, width, 4, 1.0 / 64.0);
    for (double& v : d.data) v = uniformity * 0.5 + (1.0 - uniformity) * v;
    return d;
}

}  // namespace nightforge
