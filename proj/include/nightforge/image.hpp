#pragma once
// image.hpp
//
// Raster value type and element-wise raster algebra shared by every stage of
// the pipeline.  Buffers are H x W x C row-major doubles with a nominal range
// of [0,1]; intermediates may leave the range transiently and are clamped at
// the PNG boundary only.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nightforge {

struct ImageBuffer {
    int height = 0;
    int width = 0;
    int channels = 1;  // 1 or 3 on disk; feature maps may be wider
    std::vector<double> data;  // row-major, length height*width*channels

    ImageBuffer() = default;

    ImageBuffer(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(checked_size(h, w, c), fill) {}

    static std::size_t checked_size(int h, int w, int c) {
        if (h <= 0 || w <= 0 || c <= 0)
            throw std::invalid_argument("ImageBuffer: bad dimensions " + std::to_string(h) +
                                        "x" + std::to_string(w) + "x" + std::to_string(c));
        return static_cast<std::size_t>(h) * w * c;
    }

    double& at(int r, int c, int ch = 0) {
        return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
    }
    double at(int r, int c, int ch = 0) const {
        return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
    }

    std::size_t size() const { return data.size(); }
    long pixel_count() const { return static_cast<long>(height) * width; }

    bool same_shape(const ImageBuffer& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

// Debug-build guard: no buffer may carry NaN/Inf out of a module operation.
inline void debug_check_finite(const ImageBuffer& b) {
#ifndef NDEBUG
    for (double v : b.data) assert(std::isfinite(v));
#else
    (void)b;
#endif
}

inline ImageBuffer clamp_unit(ImageBuffer b) {
    for (double& v : b.data) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return b;
}

// Element-wise product.  A single-channel right operand broadcasts across the
// left operand's channels; that is the only implicit shape coercion anywhere.
inline ImageBuffer hadamard(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.same_shape(b)) {
        ImageBuffer out = a;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
        debug_check_finite(out);
        return out;
    }
    if (b.channels == 1 && a.height == b.height && a.width == b.width) {
        ImageBuffer out = a;
        for (int r = 0; r < a.height; ++r)
            for (int c = 0; c < a.width; ++c) {
                const double m = b.at(r, c);
                for (int ch = 0; ch < a.channels; ++ch) out.at(r, c, ch) = a.at(r, c, ch) * m;
            }
        debug_check_finite(out);
        return out;
    }
    throw std::invalid_argument("hadamard: incompatible shapes");
}

inline ImageBuffer crop(const ImageBuffer& src, int r0, int c0, int h, int w) {
    if (r0 < 0 || c0 < 0 || h <= 0 || w <= 0 || r0 + h > src.height || c0 + w > src.width)
        throw std::invalid_argument("crop: window outside image");
    ImageBuffer out(h, w, src.channels);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < src.channels; ++ch)
                out.at(r, c, ch) = src.at(r0 + r, c0 + c, ch);
    return out;
}

// Separable box mean with an odd window.  Windows are intersected with the
// image and normalized by the actual sample count, so a constant image blurs
// to itself.
inline ImageBuffer box_blur(const ImageBuffer& src, int window) {
    if (window <= 0 || window % 2 == 0)
        throw std::invalid_argument("box_blur: window must be odd and positive");
    const int half = window / 2;
    ImageBuffer tmp(src.height, src.width, src.channels);
    for (int r = 0; r < src.height; ++r)
        for (int c = 0; c < src.width; ++c) {
            const int c0 = std::max(0, c - half), c1 = std::min(src.width - 1, c + half);
            for (int ch = 0; ch < src.channels; ++ch) {
                double s = 0.0;
                for (int cc = c0; cc <= c1; ++cc) s += src.at(r, cc, ch);
                tmp.at(r, c, ch) = s / (c1 - c0 + 1);
            }
        }
    ImageBuffer out(src.height, src.width, src.channels);
    for (int r = 0; r < src.height; ++r) {
        const int r0 = std::max(0, r - half), r1 = std::min(src.height - 1, r + half);
        for (int c = 0; c < src.width; ++c)
            for (int ch = 0; ch < src.channels; ++ch) {
                double s = 0.0;
                for (int rr = r0; rr <= r1; ++rr) s += tmp.at(rr, c, ch);
                out.at(r, c, ch) = s / (r1 - r0 + 1);
            }
    }
    return out;
}

// Area-average resample to out_h x out_w.  Each output pixel integrates the
// source rectangle it maps to, with fractional edge coverage.
inline ImageBuffer resize_area(const ImageBuffer& src, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_area: bad target dims");
    ImageBuffer out(out_h, out_w, src.channels);
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int r = 0; r < out_h; ++r) {
        const double y0 = r * sy, y1 = (r + 1) * sy;
        const int ry0 = static_cast<int>(std::floor(y0));
        const int ry1 = std::min(src.height - 1, static_cast<int>(std::ceil(y1)) - 1);
        for (int c = 0; c < out_w; ++c) {
            const double x0 = c * sx, x1 = (c + 1) * sx;
            const int cx0 = static_cast<int>(std::floor(x0));
            const int cx1 = std::min(src.width - 1, static_cast<int>(std::ceil(x1)) - 1);
            for (int ch = 0; ch < src.channels; ++ch) {
                double acc = 0.0, area = 0.0;
                for (int rr = ry0; rr <= ry1; ++rr) {
                    const double hy = std::min<double>(rr + 1, y1) - std::max<double>(rr, y0);
                    for (int cc = cx0; cc <= cx1; ++cc) {
                        const double wx = std::min<double>(cc + 1, x1) - std::max<double>(cc, x0);
                        acc += src.at(rr, cc, ch) * hy * wx;
                        area += hy * wx;
                    }
                }
                out.at(r, c, ch) = acc / area;
            }
        }
    }
    return out;
}

}  // namespace nightforge
