#pragma once
// tiler.hpp
//
// Patch-based reverse sampling.  One full-image latent is maintained; at
// every reverse step the denoiser runs on overlapping crops, per-pixel noise
// predictions are summed and divided by coverage counts, and a single
// implicit update advances the whole latent.  For a denoiser whose
// prediction at a pixel depends only on that pixel's values and t, the
// averaged prediction equals the full-image prediction, so tiling is exact.
//
// Edge anchors are clamped inward so every tile lies fully inside the image
// and borders are always covered.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nightforge/diffusion.hpp"
#include "nightforge/image.hpp"

namespace nightforge {

struct TilePlan {
    int patch = 64;
    int step = 16;
    std::vector<std::pair<int, int>> tiles;  // (row, col) top-left anchors
    ImageBuffer count;                       // per-pixel coverage, integer-valued

    TilePlan() : count(1, 1, 1) {}
};

inline std::vector<int> axis_anchors(int extent, int p, int s) {
    std::vector<int> anchors;
    for (int a = 0;; a += s) {
        if (a + p >= extent) {
            anchors.push_back(extent - p);
            break;
        }
        anchors.push_back(a);
    }
    return anchors;
}

inline TilePlan plan_tiles(int height, int width, int p, int s) {
    if (p > height || p > width)
        throw std::invalid_argument("plan_tiles: patch exceeds image dims");
    if (s < 1 || s > p) throw std::invalid_argument("plan_tiles: need 1 <= step <= patch");
    TilePlan plan;
    plan.patch = p;
    plan.step = s;
    const std::vector<int> rows = axis_anchors(height, p, s);
    const std::vector<int> cols = axis_anchors(width, p, s);
    plan.count = ImageBuffer(height, width, 1);
    for (int ar : rows)
        for (int ac : cols) {
            plan.tiles.emplace_back(ar, ac);
            for (int r = ar; r < ar + p; ++r)
                for (int c = ac; c < ac + p; ++c) plan.count.at(r, c, 0) += 1.0;
        }
    return plan;
}

inline ImageBuffer accumulate_and_average(const TilePlan& plan,
                                          const std::vector<ImageBuffer>& preds) {
    if (preds.size() != plan.tiles.size())
        throw std::invalid_argument("accumulate_and_average: prediction count mismatch");
    const int H = plan.count.height, W = plan.count.width;
    const int C = preds.empty() ? 1 : preds.front().channels;
    ImageBuffer sum(H, W, C);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& [ar, ac] = plan.tiles[i];
        const ImageBuffer& p = preds[i];
        if (p.height != plan.patch || p.width != plan.patch || p.channels != C)
            throw std::invalid_argument("accumulate_and_average: prediction shape mismatch");
        for (int r = 0; r < plan.patch; ++r)
            for (int c = 0; c < plan.patch; ++c)
                for (int ch = 0; ch < C; ++ch) sum.at(ar + r, ac + c, ch) += p.at(r, c, ch);
    }
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            const double n = plan.count.at(r, c, 0);
            for (int ch = 0; ch < C; ++ch) sum.at(r, c, ch) /= n;
        }
    return sum;
}

// like Denoiser but told where its crop sits, so oracles can align targets
using TileDenoiser = std::function<ImageBuffer(const ImageBuffer& x_crop,
                                               const ImageBuffer& degraded_crop,
                                               const ImageBuffer& illu_crop, int t, int row0,
                                               int col0)>;

inline TileDenoiser ignore_position(Denoiser d) {
    return [d = std::move(d)](const ImageBuffer& x, const ImageBuffer& deg, const ImageBuffer& il,
                              int t, int, int) { return d(x, deg, il, t); };
}

inline ImageBuffer tiled_restore(const ImageBuffer& degraded, const ImageBuffer& illumination,
                                 const TileDenoiser& denoiser, const NoiseSchedule& sched, int S,
                                 int p, int s, CounterRng& rng) {
    const int H = degraded.height, W = degraded.width;
    const TilePlan plan = plan_tiles(H, W, p, s);
    ImageBuffer x = normal_field(rng, H, W, degraded.channels);
    const std::vector<int> seq = make_subsequence(sched.T, S);
    std::vector<ImageBuffer> preds;
    preds.reserve(plan.tiles.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const int t = seq[i];
        const int t_prev = i + 1 < seq.size() ? seq[i + 1] : 0;
        preds.clear();
        for (const auto& [ar, ac] : plan.tiles) {
            const ImageBuffer xc = crop(x, ar, ac, p, p);
            const ImageBuffer dc = crop(degraded, ar, ac, p, p);
            const ImageBuffer ic = crop(illumination, ar, ac, p, p);
            preds.push_back(denoiser(xc, dc, ic, t, ar, ac));
        }
        const ImageBuffer eps_avg = accumulate_and_average(plan, preds);
        x = ddim_step(x, eps_avg, t, t_prev, sched);
    }
    return clamp_unit(std::move(x));
}

inline ImageBuffer tiled_restore(const ImageBuffer& degraded, const ImageBuffer& illumination,
                                 const Denoiser& denoiser, const NoiseSchedule& sched, int S,
                                 int p, int s, CounterRng& rng) {
    return tiled_restore(degraded, illumination, ignore_position(denoiser), sched, S, p, s, rng);
}

// Excess discontinuity along interior tile boundary lines.  Horizontal and
// vertical gaps are scored separately (boundary-crossing mean minus
// elsewhere mean of |finite difference|) and the two excesses averaged, so
// any globally smooth ramp scores ~0 regardless of orientation.
inline double seam_score(const ImageBuffer& img, const TilePlan& plan) {
    const int H = img.height, W = img.width;
    std::vector<bool> col_boundary(static_cast<std::size_t>(W), false);
    std::vector<bool> row_boundary(static_cast<std::size_t>(H), false);
    for (const auto& [ar, ac] : plan.tiles) {
        if (ac > 0) col_boundary[static_cast<std::size_t>(ac)] = true;
        if (ac + plan.patch < W) col_boundary[static_cast<std::size_t>(ac + plan.patch)] = true;
        if (ar > 0) row_boundary[static_cast<std::size_t>(ar)] = true;
        if (ar + plan.patch < H) row_boundary[static_cast<std::size_t>(ar + plan.patch)] = true;
    }
    double h_b = 0.0, h_e = 0.0;
    long h_bn = 0, h_en = 0;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c + 1 < W; ++c) {
            double d = 0.0;
            for (int ch = 0; ch < img.channels; ++ch)
                d += std::abs(img.at(r, c + 1, ch) - img.at(r, c, ch));
            d /= img.channels;
            if (col_boundary[static_cast<std::size_t>(c + 1)]) {
                h_b += d;
                ++h_bn;
            } else {
                h_e += d;
                ++h_en;
            }
        }
    double v_b = 0.0, v_e = 0.0;
    long v_bn = 0, v_en = 0;
    for (int r = 0; r + 1 < H; ++r)
        for (int c = 0; c < W; ++c) {
            double d = 0.0;
            for (int ch = 0; ch < img.channels; ++ch)
                d += std::abs(img.at(r + 1, c, ch) - img.at(r, c, ch));
            d /= img.channels;
            if (row_boundary[static_cast<std::size_t>(r + 1)]) {
                v_b += d;
                ++v_bn;
            } else {
                v_e += d;
                ++v_en;
            }
        }
    double score = 0.0;
    int terms = 0;
    if (h_bn > 0 && h_en > 0) {
        score += h_b / h_bn - h_e / h_en;
        ++terms;
    }
    if (v_bn > 0 && v_en > 0) {
        score += v_b / v_bn - v_e / v_en;
        ++terms;
    }
    return terms > 0 ? score / terms : 0.0;
}

}  // namespace nightforge
