#pragma once
// weather.hpp
//
// Seeded synthesis of weather degradations.  Four compositing models share
// one convention: inputs in [0,1], output clamped to [0,1] after mixing
// (clamp, never renormalize, so saturated regions stay saturated).
//
//   raindrop:  I = (1-M).C + R
//   rain:      I = T.(C + sum R_i) + (1-T).A
//   snow:      I = (1-M).C + M.S
//   fog/haze:  I = T.C + (1-T).A
//
// Masks, streak layers, and transmission maps come from procedural
// generators that are pure functions of a 64-bit seed, so a dataset is
// reproducible from its manifest alone.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nightforge/image.hpp"
#include "nightforge/noise.hpp"
#include "nightforge/rng.hpp"

namespace nightforge {

enum class DegradationKind { Raindrop, Rain, Snow, Fog, Haze };

inline const char* kind_name(DegradationKind k) {
    switch (k) {
        case DegradationKind::Raindrop: return "raindrop";
        case DegradationKind::Rain: return "rain";
        case DegradationKind::Snow: return "snow";
        case DegradationKind::Fog: return "fog";
        case DegradationKind::Haze: return "haze";
    }
    return "?";
}

inline std::optional<DegradationKind> parse_kind(std::string_view s) {
    if (s == "raindrop") return DegradationKind::Raindrop;
    if (s == "rain") return DegradationKind::Rain;
    if (s == "snow") return DegradationKind::Snow;
    if (s == "fog") return DegradationKind::Fog;
    if (s == "haze") return DegradationKind::Haze;
    return std::nullopt;
}

struct WeatherParams {
    std::uint64_t seed = 0;

    // rain streaks
    int streak_count = 3;         // number of layers
    int streaks_per_layer = 0;    // 0 = scale with image area
    double angle_deg = 0.0;       // from vertical
    double length_px = 24.0;
    double width_px = 1.5;
    double intensity = 0.25;

    // particles (snow, raindrop)
    double density = 0.1;
    double radius_min = 1.5;
    double radius_max = 3.5;

    // atmosphere
    std::array<double, 3> atmospheric_light = {0.8, 0.8, 0.8};
    double beta = 1.0;
    double haze_uniformity = 0.3;
};

struct WeatherRecord {
    std::string kind;
    std::uint64_t field_seed = 0;
    std::map<std::string, double> params;
};

namespace detail {

inline void require_mask_range(const ImageBuffer& m, const char* op) {
    for (double v : m.data)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(op) + ": mask out of [0,1]");
}

inline void require_same_plane(const ImageBuffer& a, const ImageBuffer& b, const char* op) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument(std::string(op) + ": spatial dims mismatch");
}

// broadcast read: single-channel buffers serve every channel
inline double bcast(const ImageBuffer& b, int r, int c, int ch) {
    return b.at(r, c, b.channels == 1 ? 0 : ch);
}

}  // namespace detail

inline ImageBuffer composite_raindrop(const ImageBuffer& C, const ImageBuffer& M,
                                      const ImageBuffer& R) {
    detail::require_same_plane(C, M, "composite_raindrop");
    detail::require_same_plane(C, R, "composite_raindrop");
    if (M.channels != 1) throw std::invalid_argument("composite_raindrop: mask must be 1-channel");
    detail::require_mask_range(M, "composite_raindrop");
    ImageBuffer out(C.height, C.width, C.channels);
    for (int r = 0; r < C.height; ++r)
        for (int c = 0; c < C.width; ++c) {
            const double m = M.at(r, c, 0);
            for (int ch = 0; ch < C.channels; ++ch) {
                const double v = (1.0 - m) * C.at(r, c, ch) + detail::bcast(R, r, c, ch);
                out.at(r, c, ch) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            }
        }
    return out;
}

inline ImageBuffer composite_rain(const ImageBuffer& C, const std::vector<ImageBuffer>& streaks,
                                  const ImageBuffer& T, const std::array<double, 3>& A) {
    detail::require_same_plane(C, T, "composite_rain");
    if (T.channels != 1) throw std::invalid_argument("composite_rain: T must be 1-channel");
    detail::require_mask_range(T, "composite_rain");
    for (const auto& s : streaks) detail::require_same_plane(C, s, "composite_rain");
    ImageBuffer out(C.height, C.width, C.channels);
    for (int r = 0; r < C.height; ++r)
        for (int c = 0; c < C.width; ++c) {
            const double t = T.at(r, c, 0);
            for (int ch = 0; ch < C.channels; ++ch) {
                double x = C.at(r, c, ch);
                for (const auto& s : streaks) x += detail::bcast(s, r, c, ch);
                const double v = t * x + (1.0 - t) * A[static_cast<std::size_t>(ch)];
                out.at(r, c, ch) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            }
        }
    return out;
}

inline ImageBuffer composite_snow(const ImageBuffer& C, const ImageBuffer& M,
                                  const ImageBuffer& S) {
    detail::require_same_plane(C, M, "composite_snow");
    detail::require_same_plane(C, S, "composite_snow");
    if (M.channels != 1) throw std::invalid_argument("composite_snow: mask must be 1-channel");
    detail::require_mask_range(M, "composite_snow");
    ImageBuffer out(C.height, C.width, C.channels);
    for (int r = 0; r < C.height; ++r)
        for (int c = 0; c < C.width; ++c) {
            const double m = M.at(r, c, 0);
            for (int ch = 0; ch < C.channels; ++ch) {
                const double v = (1.0 - m) * C.at(r, c, ch) + m * detail::bcast(S, r, c, ch);
                out.at(r, c, ch) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            }
        }
    return out;
}

inline ImageBuffer composite_haze(const ImageBuffer& C, const ImageBuffer& T,
                                  const std::array<double, 3>& A) {
    detail::require_same_plane(C, T, "composite_haze");
    if (T.channels != 1) throw std::invalid_argument("composite_haze: T must be 1-channel");
    detail::require_mask_range(T, "composite_haze");
    ImageBuffer out(C.height, C.width, C.channels);
    for (int r = 0; r < C.height; ++r)
        for (int c = 0; c < C.width; ++c) {
            const double t = T.at(r, c, 0);
            for (int ch = 0; ch < C.channels; ++ch) {
                const double v = t * C.at(r, c, ch) + (1.0 - t) * A[static_cast<std::size_t>(ch)];
                out.at(r, c, ch) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            }
        }
    return out;
}

// T = exp(-beta * D) with D a smooth pseudo-depth in [0,1]; uniformity=1
// collapses D to the constant 0.5
inline ImageBuffer gen_transmission(std::uint64_t seed, int height, int width, double beta,
                                    double uniformity) {
    if (!(beta > 0.0)) throw std::invalid_argument("gen_transmission: beta must be positive");
    if (!(uniformity >= 0.0 && uniformity <= 1.0))
        throw std::invalid_argument("gen_transmission: uniformity out of [0,1]");
    ImageBuffer T = pseudo_depth(seed, height, width, uniformity);
    for (double& v : T.data) v = std::exp(-beta * v);
    return T;
}

// n layers of anti-aliased streak segments; layer i is seeded with
// derive_key(seed, i), so leading layers are stable when n changes
inline std::vector<ImageBuffer> gen_rain_streaks(std::uint64_t seed, int height, int width, int n,
                                                 double angle_deg, double length_px,
                                                 double width_px, double intensity,
                                                 int streaks_per_layer = 0) {
    if (n < 1) throw std::invalid_argument("gen_rain_streaks: need at least one layer");
    if (length_px < 1.0 || width_px < 1.0)
        throw std::invalid_argument("gen_rain_streaks: degenerate streak geometry");
    if (streaks_per_layer <= 0)
        streaks_per_layer = std::max(1, static_cast<int>(std::lround(height * width / 2000.0)));

    std::vector<ImageBuffer> layers;
    layers.reserve(static_cast<std::size_t>(n));
    for (int layer = 0; layer < n; ++layer) {
        CounterRng rng(derive_key(seed, static_cast<std::uint64_t>(layer)));
        ImageBuffer L(height, width, 1);
        for (int k = 0; k < streaks_per_layer; ++k) {
            const double cy = rng.uniform(0.0, static_cast<double>(height));
            const double cx = rng.uniform(0.0, static_cast<double>(width));
            const double ang = (angle_deg + rng.uniform(-5.0, 5.0)) * (3.14159265358979323846 / 180.0);
            const double len = length_px * rng.uniform(0.7, 1.3);
            // direction measured from vertical
            const double dy = std::cos(ang), dx = std::sin(ang);
            const double half = 0.5 * len, hw = 0.5 * width_px;
            const int r0 = std::max(0, static_cast<int>(std::floor(cy - half - hw - 1)));
            const int r1 = std::min(height - 1, static_cast<int>(std::ceil(cy + half + hw + 1)));
            const int c0 = std::max(0, static_cast<int>(std::floor(cx - std::abs(dx) * half - hw - 1)));
            const int c1 = std::min(width - 1, static_cast<int>(std::ceil(cx + std::abs(dx) * half + hw + 1)));
            for (int r = r0; r <= r1; ++r)
                for (int c = c0; c <= c1; ++c) {
                    const double py = r - cy, px = c - cx;
                    double along = py * dy + px * dx;
                    along = along < -half ? -half : (along > half ? half : along);
                    const double qy = py - along * dy, qx = px - along * dx;
                    const double dist = std::sqrt(qy * qy + qx * qx);
                    const double a = hw - dist + 0.5;
                    const double v = intensity * (a < 0.0 ? 0.0 : (a > 1.0 ? 1.0 : a));
                    if (v > L.at(r, c, 0)) L.at(r, c, 0) = v;
                }
        }
        layers.push_back(std::move(L));
    }
    return layers;
}

struct ParticleField {
    ImageBuffer mask;     // 1-channel, [0,1]
    ImageBuffer payload;  // snow brightness (1ch) or raindrop refraction (C channels)
};

// Soft particles calibrated so the fraction of pixels with M >= 0.5 lands
// near `density`.  Particle count follows the Poisson union correction
// N = ln(1/(1-density)) * area / mean_particle_area, with centers drawn over
// a margin-extended region to avoid edge deficit.  For raindrops, `clean`
// supplies the image refracted into each drop.
inline ParticleField gen_particle_field(std::uint64_t seed, int height, int width, double density,
                                        double radius_min, double radius_max, DegradationKind kind,
                                        const ImageBuffer* clean = nullptr) {
    if (!(density > 0.0 && density <= 1.0))
        throw std::invalid_argument("gen_particle_field: density out of (0,1]");
    if (!(radius_min > 0.0) || radius_max < radius_min)
        throw std::invalid_argument("gen_particle_field: empty radius range");
    const bool drops = kind == DegradationKind::Raindrop;
    if (drops && clean == nullptr)
        throw std::invalid_argument("gen_particle_field: raindrop payload needs the clean image");
    if (drops) {
        if (clean->height != height || clean->width != width)
            throw std::invalid_argument("gen_particle_field: clean image dims mismatch");
    }

    const double aspect = drops ? 1.3 : 1.0;
    const double mean_area = aspect * 3.14159265358979323846 *
                             (radius_min * radius_min + radius_min * radius_max +
                              radius_max * radius_max) / 3.0;
    const double margin = std::ceil(radius_max * aspect) + 1.0;
    const double ext_area = (height + 2.0 * margin) * (width + 2.0 * margin);
    const long count = std::lround(std::log(1.0 / (1.0 - density)) * ext_area / mean_area);

    CounterRng rng(seed);
    ImageBuffer M(height, width, 1);
    const int pay_ch = drops ? clean->channels : 1;
    ImageBuffer payload(height, width, pay_ch);
    // winning particle per pixel decides the payload
    std::vector<double> bright(static_cast<std::size_t>(height) * width, 0.0);
    std::vector<int> shift_r(M.data.size(), 0), shift_c(M.data.size(), 0);

    ImageBuffer blurred = drops ? box_blur(*clean, 9) : ImageBuffer(1, 1, 1);

    for (long i = 0; i < count; ++i) {
        const double cy = rng.uniform(-margin, height + margin);
        const double cx = rng.uniform(-margin, width + margin);
        const double rad = rng.uniform(radius_min, radius_max);
        const double b = rng.uniform(0.8, 1.0);
        const int sr = rng.uniform_int(-3, 3), sc = rng.uniform_int(-3, 3);
        const double ry = rad * aspect, rx = rad;
        const int rr0 = std::max(0, static_cast<int>(std::floor(cy - ry - 1)));
        const int rr1 = std::min(height - 1, static_cast<int>(std::ceil(cy + ry + 1)));
        const int cc0 = std::max(0, static_cast<int>(std::floor(cx - rx - 1)));
        const int cc1 = std::min(width - 1, static_cast<int>(std::ceil(cx + rx + 1)));
        for (int r = rr0; r <= rr1; ++r)
            for (int c = cc0; c <= cc1; ++c) {
                // normalized elliptical distance recovers a circle when aspect=1
                const double dy = (r - cy) / aspect, dx = c - cx;
                const double dist = std::sqrt(dy * dy + dx * dx);
                const double a = rad - dist + 0.5;
                const double m = a < 0.0 ? 0.0 : (a > 1.0 ? 1.0 : a);
                const std::size_t idx = static_cast<std::size_t>(r) * width + c;
                if (m > M.data[idx]) {
                    M.data[idx] = m;
                    bright[idx] = b;
                    shift_r[idx] = sr;
                    shift_c[idx] = sc;
                }
            }
    }

    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * width + c;
            if (M.data[idx] <= 0.0) continue;
            if (drops) {
                const int pr = std::clamp(r + shift_r[idx], 0, height - 1);
                const int pc = std::clamp(c + shift_c[idx], 0, width - 1);
                for (int ch = 0; ch < pay_ch; ++ch)
                    payload.at(r, c, ch) = M.data[idx] * blurred.at(pr, pc, ch);
            } else {
                payload.at(r, c, 0) = bright[idx];
            }
        }
    return {std::move(M), std::move(payload)};
}

// Draws per-image weather parameters from documented ranges; every sampled
// value lands in the returned record via synthesize_weather.
inline WeatherParams sample_weather_params(DegradationKind kind, CounterRng& rng,
                                           std::uint64_t field_seed) {
    WeatherParams p;
    p.seed = field_seed;
    const double a = rng.uniform(0.7, 0.9);
    p.atmospheric_light = {a, a, a};
    switch (kind) {
        case DegradationKind::Raindrop:
            p.density = rng.uniform(0.05, 0.12);
            p.radius_min = 2.0;
            p.radius_max = 5.0;
            break;
        case DegradationKind::Rain:
            p.streak_count = 3;
            p.angle_deg = rng.uniform(-20.0, 20.0);
            p.length_px = rng.uniform(15.0, 35.0);
            p.width_px = rng.uniform(1.0, 2.0);
            p.intensity = rng.uniform(0.15, 0.35);
            p.beta = rng.uniform(0.2, 0.6);
            p.haze_uniformity = 0.8;
            break;
        case DegradationKind::Snow:
            p.density = rng.uniform(0.05, 0.12);
            p.radius_min = 1.5;
            p.radius_max = 3.5;
            break;
        case DegradationKind::Fog:
            p.beta = rng.uniform(0.8, 2.0);
            p.haze_uniformity = rng.uniform(0.1, 0.4);
            break;
        case DegradationKind::Haze:
            p.beta = rng.uniform(0.4, 1.2);
            p.haze_uniformity = rng.uniform(0.85, 1.0);
            break;
    }
    return p;
}

inline std::pair<ImageBuffer, WeatherRecord> synthesize_weather(const ImageBuffer& C,
                                                                DegradationKind kind,
                                                                const WeatherParams& p) {
    WeatherRecord rec;
    rec.kind = kind_name(kind);
    rec.field_seed = p.seed;
    rec.params["atmospheric_light"] = p.atmospheric_light[0];
    ImageBuffer I(1, 1, 1);
    switch (kind) {
        case DegradationKind::Raindrop: {
            rec.params["density"] = p.density;
            rec.params["radius_min"] = p.radius_min;
            rec.params["radius_max"] = p.radius_max;
            const auto field = gen_particle_field(p.seed, C.height, C.width, p.density,
                                                  p.radius_min, p.radius_max, kind, &C);
            I = composite_raindrop(C, field.mask, field.payload);
            break;
        }
        case DegradationKind::Rain: {
            rec.params["streak_count"] = p.streak_count;
            rec.params["angle_deg"] = p.angle_deg;
            rec.params["length_px"] = p.length_px;
            rec.params["width_px"] = p.width_px;
            rec.params["intensity"] = p.intensity;
            rec.params["beta"] = p.beta;
            rec.params["haze_uniformity"] = p.haze_uniformity;
            const auto layers =
                gen_rain_streaks(derive_key(p.seed, 1), C.height, C.width, p.streak_count,
                                 p.angle_deg, p.length_px, p.width_px, p.intensity,
                                 p.streaks_per_layer);
            const auto T = gen_transmission(derive_key(p.seed, 2), C.height, C.width, p.beta,
                                            p.haze_uniformity);
            I = composite_rain(C, layers, T, p.atmospheric_light);
            break;
        }
        case DegradationKind::Snow: {
            rec.params["density"] = p.density;
            rec.params["radius_min"] = p.radius_min;
            rec.params["radius_max"] = p.radius_max;
            const auto field = gen_particle_field(p.seed, C.height, C.width, p.density,
                                                  p.radius_min, p.radius_max, kind);
            I = composite_snow(C, field.mask, field.payload);
            break;
        }
        case DegradationKind::Fog:
        case DegradationKind::Haze: {
            rec.params["beta"] = p.beta;
            rec.params["haze_uniformity"] = p.haze_uniformity;
            const auto T = gen_transmission(p.seed, C.height, C.width, p.beta, p.haze_uniformity);
            I = composite_haze(C, T, p.atmospheric_light);
            break;
        }
    }
    return {std::move(I), std::move(rec)};
}

}  // namespace nightforge
