#pragma once
// diffusion.hpp
//
// Noise schedule, forward noising, the noise-prediction objective, and a
// deterministic implicit reverse sampler (eta = 0).  Timesteps are 1..T with
// the convention point t=0 meaning "fully denoised" (cumulative signal
// retention exactly 1), so the final reverse step lands on the clean
// estimate without a special case.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "nightforge/image.hpp"
#include "nightforge/rng.hpp"

namespace nightforge {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;           // beta[t], t in 1..T; beta[0] unused
    std::vector<double> alpha_bar;      // alpha_bar[t] = prod_{s<=t}(1-beta_s); alpha_bar[0] = 1
    std::vector<double> sqrt_ab;        // sqrt(alpha_bar[t])
    std::vector<double> sqrt_one_m_ab;  // sqrt(1 - alpha_bar[t])
};

using Denoiser = std::function<ImageBuffer(const ImageBuffer& x_t, const ImageBuffer& degraded,
                                           const ImageBuffer& illumination, int t)>;

inline NoiseSchedule build_schedule(int T = 1000, double beta_start = 1e-4,
                                    double beta_end = 0.02) {
    if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("build_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.sqrt_ab.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.sqrt_one_m_ab.assign(static_cast<std::size_t>(T) + 1, 0.0);
    long double acc = 1.0L;
    for (int t = 1; t <= T; ++t) {
        const double b =
            T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1.0);
        s.beta[static_cast<std::size_t>(t)] = b;
        acc *= 1.0L - static_cast<long double>(b);
        const double ab = static_cast<double>(acc);
        s.alpha_bar[static_cast<std::size_t>(t)] = ab;
        s.sqrt_ab[static_cast<std::size_t>(t)] = std::sqrt(ab);
        s.sqrt_one_m_ab[static_cast<std::size_t>(t)] = std::sqrt(1.0 - ab);
    }
    return s;
}

inline void check_timestep(const NoiseSchedule& s, int t, const char* op) {
    if (t < 0 || t > s.T) throw std::invalid_argument(std::string(op) + ": timestep out of range");
}

// x_t = sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps; t=0 returns x0 exactly
inline ImageBuffer forward_sample(const ImageBuffer& x0, int t, const ImageBuffer& eps,
                                  const NoiseSchedule& s) {
    check_timestep(s, t, "forward_sample");
    if (!x0.same_shape(eps)) throw std::invalid_argument("forward_sample: dims mismatch");
    const double a = s.sqrt_ab[static_cast<std::size_t>(t)];
    const double b = s.sqrt_one_m_ab[static_cast<std::size_t>(t)];
    ImageBuffer out(x0.height, x0.width, x0.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

inline double training_loss(const Denoiser& denoiser, const ImageBuffer& x0,
                            const ImageBuffer& degraded, const ImageBuffer& illumination, int t,
                            const ImageBuffer& eps, const NoiseSchedule& s) {
    const ImageBuffer x_t = forward_sample(x0, t, eps, s);
    const ImageBuffer pred = denoiser(x_t, degraded, illumination, t);
    if (!pred.same_shape(eps)) throw std::invalid_argument("training_loss: prediction dims mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < eps.data.size(); ++i) {
        const double d = eps.data[i] - pred.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps.data.size());
}

// S evenly spaced timesteps descending from T: round(T*k/S) for k=S..1,
// deduplicated.  The sampler appends the final hop to t=0 itself.
inline std::vector<int> make_subsequence(int T, int S) {
    if (S < 1 || S > T) throw std::invalid_argument("make_subsequence: need 1 <= S <= T");
    std::vector<int> seq;
    seq.reserve(static_cast<std::size_t>(S));
    for (int k = S; k >= 1; --k) {
        const int t = static_cast<int>(std::lround(static_cast<double>(T) * k / S));
        if (seq.empty() || seq.back() != t) seq.push_back(t);
    }
    return seq;
}

inline ImageBuffer ddim_step(const ImageBuffer& x_t, const ImageBuffer& eps_pred, int t,
                             int t_prev, const NoiseSchedule& s) {
    check_timestep(s, t, "ddim_step");
    if (t < 1 || t_prev > t || t_prev < 0)
        throw std::invalid_argument("ddim_step: timestep ordering violation");
    if (!x_t.same_shape(eps_pred)) throw std::invalid_argument("ddim_step: dims mismatch");
    if (t_prev == t) return x_t;
    const double sa_t = s.sqrt_ab[static_cast<std::size_t>(t)];
    const double sb_t = s.sqrt_one_m_ab[static_cast<std::size_t>(t)];
    const double sa_p = s.sqrt_ab[static_cast<std::size_t>(t_prev)];
    const double sb_p = s.sqrt_one_m_ab[static_cast<std::size_t>(t_prev)];
    ImageBuffer out(x_t.height, x_t.width, x_t.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double x0_hat = (x_t.data[i] - sb_t * eps_pred.data[i]) / sa_t;
        out.data[i] = sa_p * x0_hat + sb_p * eps_pred.data[i];
    }
    return out;
}

inline ImageBuffer normal_field(CounterRng& rng, int height, int width, int channels) {
    ImageBuffer f(height, width, channels);
    for (double& v : f.data) v = rng.normal();
    return f;
}

inline ImageBuffer restore(const ImageBuffer& degraded, const ImageBuffer& illumination,
                           const Denoiser& denoiser, const NoiseSchedule& s, int S,
                           CounterRng& rng) {
    ImageBuffer x = normal_field(rng, degraded.height, degraded.width, degraded.channels);
    const std::vector<int> seq = make_subsequence(s.T, S);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const int t = seq[i];
        const int t_prev = i + 1 < seq.size() ? seq[i + 1] : 0;
        const ImageBuffer eps_pred = denoiser(x, degraded, illumination, t);
        x = ddim_step(x, eps_pred, t, t_prev, s);
    }
    return clamp_unit(std::move(x));
}

// exact-noise denoiser for a known target: inverts forward_sample, so the
// sampler must reproduce the target regardless of step count
inline Denoiser oracle_denoiser(ImageBuffer target, const NoiseSchedule& s) {
    return [target = std::move(target), &s](const ImageBuffer& x_t, const ImageBuffer&,
                                            const ImageBuffer&, int t) {
        const double sa = s.sqrt_ab[static_cast<std::size_t>(t)];
        const double sb = s.sqrt_one_m_ab[static_cast<std::size_t>(t)];
        ImageBuffer eps(x_t.height, x_t.width, x_t.channels);
        for (std::size_t i = 0; i < eps.data.size(); ++i)
            eps.data[i] = (x_t.data[i] - sa * target.data[i]) / sb;
        return eps;
    };
}

}  // namespace nightforge
