#pragma once
// metrics.hpp
//
// PSNR and SSIM with every constant pinned: SSIM uses an 11x11 Gaussian
// window (sigma 1.5), K1=0.01, K2=0.03, peak 1, valid windows only, and RGB
// collapses to luma with weights (0.299, 0.587, 0.114).  PSNR is capped at
// 99 dB so identical images compare equal across platforms.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "nightforge/image.hpp"

namespace nightforge {

inline double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: dims mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.data.size());
    if (mse == 0.0) return 99.0;
    const double v = 10.0 * std::log10(peak * peak / mse);
    return v > 99.0 ? 99.0 : v;
}

inline ImageBuffer to_luma(const ImageBuffer& a) {
    if (a.channels == 1) return a;
    ImageBuffer g(a.height, a.width, 1);
    for (int r = 0; r < a.height; ++r)
        for (int c = 0; c < a.width; ++c)
            g.at(r, c, 0) =
                0.299 * a.at(r, c, 0) + 0.587 * a.at(r, c, 1) + 0.114 * a.at(r, c, 2);
    return g;
}

namespace detail {

inline std::vector<double> gaussian_window_11() {
    std::vector<double> w(121);
    const double sigma = 1.5;
    double sum = 0.0;
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
            const double dy = y - 5, dx = x - 5;
            const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            w[static_cast<std::size_t>(y * 11 + x)] = v;
            sum += v;
        }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace detail

inline double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: dims mismatch");
    if (a.height < 11 || a.width < 11)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    const ImageBuffer x = to_luma(a), y = to_luma(b);
    static const std::vector<double> w = detail::gaussian_window_11();
    const double C1 = 1e-4, C2 = 9e-4;  // (K1*peak)^2, (K2*peak)^2
    double acc = 0.0;
    long count = 0;
    for (int r = 5; r < x.height - 5; ++r)
        for (int c = 5; c < x.width - 5; ++c) {
            double mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0, mxy = 0.0;
            for (int dy = -5; dy <= 5; ++dy)
                for (int dx = -5; dx <= 5; ++dx) {
                    const double wv = w[static_cast<std::size_t>((dy + 5) * 11 + (dx + 5))];
                    const double xv = x.at(r + dy, c + dx, 0);
                    const double yv = y.at(r + dy, c + dx, 0);
                    mx += wv * xv;
                    my += wv * yv;
                    mxx += wv * xv * xv;
                    myy += wv * yv * yv;
                    mxy += wv * xv * yv;
                }
            const double vx = mxx - mx * mx;
            const double vy = myy - my * my;
            const double cxy = mxy - mx * my;
            const double num = (2.0 * mx * my + C1) * (2.0 * cxy + C2);
            const double den = (mx * mx + my * my + C1) * (vx + vy + C2);
            acc += num / den;
            ++count;
        }
    return acc / static_cast<double>(count);
}

struct MetricReport {
    struct Entry {
        std::string name;
        double psnr = 0.0;
        double ssim = 0.0;
    };
    std::vector<Entry> per_image;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    void finalize() {
        double p = 0.0, s = 0.0;
        for (const Entry& e : per_image) {
            p += e.psnr;
            s += e.ssim;
        }
        const double n = per_image.empty() ? 1.0 : static_cast<double>(per_image.size());
        mean_psnr = p / n;
        mean_ssim = s / n;
    }
};

}  // namespace nightforge
