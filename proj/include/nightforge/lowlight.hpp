#pragma once
// lowlight.hpp
//
// Curve-based darkening.  One step applies x <- x + a*x*(1-x) with a
// per-pixel adjustment map a in [-1,0]; ten iterations compose into a
// high-order darkening curve.  The step is evaluated as x*(1+a) - a*x*x:
// algebraically identical, but this arrangement keeps x=0 and x=1 exact
// fixed points, keeps a=0 an exact identity, and is monotone in x under
// floating-point rounding (both terms are monotone, and rounding preserves
// monotonicity).  It also evaluates the a=-1 floor 0.5^(2^10) = 2^-1024
// exactly instead of flushing it to zero.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nightforge/image.hpp"
#include "nightforge/noise.hpp"
#include "nightforge/rng.hpp"

namespace nightforge {

struct ExposureConfig {
    double e = 0.2;                     // darkened value of mid-gray input
    int n = 10;
    double variation_amplitude = 0.0;   // spatial non-uniformity of the maps
    std::uint64_t seed = 0;
};

struct AdjustmentMapStack {
    std::vector<ImageBuffer> maps;  // n single-channel maps, values in [-1,0]
};

inline double curve_step_scalar(double x, double a) { return x * (1.0 + a) - a * x * x; }

inline double ec_curve_scalar(double x, double a, int n) {
    for (int i = 0; i < n; ++i) x = curve_step_scalar(x, a);
    return x;
}

inline ImageBuffer curve_step(const ImageBuffer& x, const ImageBuffer& alpha) {
    if (alpha.channels != 1) throw std::invalid_argument("curve_step: alpha must be 1-channel");
    if (alpha.height != x.height || alpha.width != x.width)
        throw std::invalid_argument("curve_step: dims mismatch");
    for (double a : alpha.data)
        if (!(a >= -1.0 && a <= 0.0)) throw std::invalid_argument("curve_step: alpha out of [-1,0]");
    ImageBuffer out(x.height, x.width, x.channels);
    for (int r = 0; r < x.height; ++r)
        for (int c = 0; c < x.width; ++c) {
            const double a = alpha.at(r, c, 0);
            for (int ch = 0; ch < x.channels; ++ch)
                out.at(r, c, ch) = curve_step_scalar(x.at(r, c, ch), a);
        }
    return out;
}

inline ImageBuffer darken(const ImageBuffer& x, const AdjustmentMapStack& stack) {
    if (stack.maps.empty()) throw std::invalid_argument("darken: empty adjustment stack");
    ImageBuffer out = x;
    for (const auto& m : stack.maps) out = curve_step(out, m);
    return out;
}

// darkest reachable value for mid-gray input: 0.5^(2^n)
inline double exposure_floor(int n = 10) { return ec_curve_scalar(0.5, -1.0, n); }

// Solves EC_n(0.5, a) = e for the constant a by bisection.  The curve is
// monotone increasing in a, so the root is unique.
inline double calibrate_alpha(double e, int n = 10) {
    if (!(e > 0.0 && e <= 0.5))
        throw std::invalid_argument("calibrate_alpha: e must be in (0, 0.5]");
    const double floor_e = exposure_floor(n);
    if (e < floor_e)
        throw std::invalid_argument("calibrate_alpha: e below reachable floor " +
                                    std::to_string(floor_e));
    if (e == 0.5) return 0.0;
    if (e == floor_e) return -1.0;
    double lo = -1.0, hi = 0.0;
    double best = -0.5, best_res = 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double v = ec_curve_scalar(0.5, mid, n);
        const double res = std::abs(v - e);
        if (res < best_res) {
            best_res = res;
            best = mid;
        }
        if (res < 1e-13) break;
        if (v < e)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 0.0) break;
    }
    return best;
}

// Every iteration map is clamp(a_base + amplitude*phi, -1, 0) with phi a
// seeded smooth field in [-1,1]; amplitude 0 gives constant maps.
inline AdjustmentMapStack build_adjustment_stack(const ExposureConfig& cfg, int height,
                                                 int width) {
    if (cfg.n < 1) throw std::invalid_argument("build_adjustment_stack: n must be positive");
    if (!(cfg.variation_amplitude >= 0.0 && cfg.variation_amplitude <= 0.2))
        throw std::invalid_argument("build_adjustment_stack: variation_amplitude out of [0, 0.2]");
    const double a_base = calibrate_alpha(cfg.e, cfg.n);
    AdjustmentMapStack stack;
    stack.maps.reserve(static_cast<std::size_t>(cfg.n));
    for (int i = 0; i < cfg.n; ++i) {
        ImageBuffer m(height, width, 1);
        if (cfg.variation_amplitude == 0.0) {
            for (double& v : m.data) v = a_base;
        } else {
            const ImageBuffer f =
                noise_field(derive_key(cfg.seed, static_cast<std::uint64_t>(i)), height, width, 3,
                            1.0 / 24.0);
            for (std::size_t k = 0; k < m.data.size(); ++k) {
                const double phi = 2.0 * (f.data[k] - 0.5);
                double v = a_base + cfg.variation_amplitude * phi;
                m.data[k] = v < -1.0 ? -1.0 : (v > 0.0 ? 0.0 : v);
            }
        }
        stack.maps.push_back(std::move(m));
    }
    return stack;
}

inline double sample_exposure(CounterRng& rng) { return rng.uniform(0.05, 0.3); }

}  // namespace nightforge
