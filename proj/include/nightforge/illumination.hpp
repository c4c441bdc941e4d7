#pragma once
// illumination.hpp
//
// Deterministic illumination estimation.  The observed low-light image is
// modeled as y = z (.) x with reflectance z and illumination x; x starts as
// the per-pixel channel maximum and is refined by pulling it toward a
// blurred local-brightness envelope.  The residual is non-negative, so the
// cascade is pointwise non-decreasing and dividing y by x never brightens
// past the floor.

#include <algorithm>
#include <stdexcept>

#include "nightforge/image.hpp"

namespace nightforge {

inline constexpr double kIlluminationFloor = 1e-3;

inline ImageBuffer init_illumination(const ImageBuffer& y) {
    ImageBuffer x(y.height, y.width, 1);
    for (int r = 0; r < y.height; ++r)
        for (int c = 0; c < y.width; ++c) {
            double m = 0.0;
            for (int ch = 0; ch < y.channels; ++ch) m = std::max(m, y.at(r, c, ch));
            x.at(r, c, 0) = std::max(m, kIlluminationFloor);
        }
    return x;
}

inline ImageBuffer refine_step(const ImageBuffer& x, const ImageBuffer& envelope, double kappa) {
    if (!(kappa > 0.0 && kappa <= 1.0)) throw std::invalid_argument("refine_step: kappa out of (0,1]");
    if (!x.same_shape(envelope)) throw std::invalid_argument("refine_step: dims mismatch");
    ImageBuffer out(x.height, x.width, x.channels);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double residual = std::max(0.0, envelope.data[i] - x.data[i]);
        // kappa=1 must reach the envelope exactly, so add the full residual
        out.data[i] = kappa == 1.0 ? std::max(x.data[i], envelope.data[i])
                                   : x.data[i] + kappa * residual;
    }
    return out;
}

inline ImageBuffer estimate_illumination(const ImageBuffer& y, int stages = 3, double kappa = 0.5,
                                         int blur_window = 15) {
    if (stages < 1) throw std::invalid_argument("estimate_illumination: stages must be >= 1");
    ImageBuffer x = init_illumination(y);
    const ImageBuffer envelope = box_blur(x, blur_window);
    for (int s = 0; s < stages; ++s) x = refine_step(x, envelope, kappa);
    return x;
}

inline ImageBuffer retinex_divide(const ImageBuffer& y, const ImageBuffer& x) {
    if (x.channels != 1) throw std::invalid_argument("retinex_divide: illumination must be 1-channel");
    if (x.height != y.height || x.width != y.width)
        throw std::invalid_argument("retinex_divide: dims mismatch");
    for (double v : x.data)
        if (v < kIlluminationFloor) throw std::invalid_argument("retinex_divide: illumination below floor");
    ImageBuffer z(y.height, y.width, y.channels);
    for (int r = 0; r < y.height; ++r)
        for (int c = 0; c < y.width; ++c) {
            const double d = x.at(r, c, 0);
            for (int ch = 0; ch < y.channels; ++ch) {
                const double v = y.at(r, c, ch) / d;
                z.at(r, c, ch) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            }
        }
    return z;
}

}  // namespace nightforge
