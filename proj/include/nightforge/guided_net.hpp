#pragma once
// guided_net.hpp
//
// Small conditional denoiser with illumination guidance.  The latent and the
// degraded image are concatenated along channels and passed through a
// two-scale encoder-decoder; a separate encoder projects the illumination
// map to feature pyramids at full and half resolution, and each level is
// injected into the backbone through cross-attention (queries from the
// illumination features, keys/values from the backbone features, output
// added residually).  Forward and reverse-mode gradients are hand-written;
// finite differences serve only as a validation oracle in the tests.
//
// All activations are SiLU, chosen for smoothness so central-difference
// checks converge cleanly.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nightforge/diffusion.hpp"
#include "nightforge/image.hpp"
#include "nightforge/rng.hpp"

namespace nightforge {

struct NetConfig {
    int c0 = 8;    // full-resolution channels
    int c1 = 10;   // half-resolution channels
    int temb = 8;  // sinusoidal time embedding width (even)
};

namespace detail {

struct ParamLayout {
    int conv_in_w, conv_in_b;
    int proj0_w, proj0_b;
    int proj1_w, proj1_b;
    int ill0_w, ill0_b;
    int ill1_w, ill1_b;
    int wq0, wk0, wv0;
    int wq1, wk1, wv1;
    int down_w, down_b;
    int up_w, up_b;
    int out_w, out_b;
    int total;
};

inline ParamLayout make_layout(const NetConfig& c) {
    ParamLayout L{};
    int p = 0;
    auto take = [&p](int n) { const int at = p; p += n; return at; };
    L.conv_in_w = take(c.c0 * 6 * 9);
    L.conv_in_b = take(c.c0);
    L.proj0_w = take(c.c0 * c.temb);
    L.proj0_b = take(c.c0);
    L.proj1_w = take(c.c1 * c.temb);
    L.proj1_b = take(c.c1);
    L.ill0_w = take(c.c0 * 1 * 9);
    L.ill0_b = take(c.c0);
    L.ill1_w = take(c.c1 * c.c0 * 9);
    L.ill1_b = take(c.c1);
    L.wq0 = take(c.c0 * c.c0);
    L.wk0 = take(c.c0 * c.c0);
    L.wv0 = take(c.c0 * c.c0);
    L.wq1 = take(c.c1 * c.c1);
    L.wk1 = take(c.c1 * c.c1);
    L.wv1 = take(c.c1 * c.c1);
    L.down_w = take(c.c1 * c.c0 * 9);
    L.down_b = take(c.c1);
    L.up_w = take(c.c0 * c.c1 * 9);
    L.up_b = take(c.c0);
    L.out_w = take(3 * c.c0 * 9);
    L.out_b = take(3);
    L.total = p;
    return L;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

// Zero-padded neighborhood of one output pixel, laid out in weight order
// [ic][ky][kx] so the per-filter work below is a contiguous dot product.
inline void gather_patch(const ImageBuffer& in, int ro, int co, int stride, double* patch) {
    const int cin = in.channels;
    for (int ky = 0; ky < 3; ++ky) {
        const int r = ro * stride + ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
            const int c = co * stride + kx - 1;
            double* dst = patch + ky * 3 + kx;
            if (r < 0 || r >= in.height || c < 0 || c >= in.width) {
                for (int ic = 0; ic < cin; ++ic) dst[ic * 9] = 0.0;
            } else {
                const double* src =
                    &in.data[(static_cast<std::size_t>(r) * in.width + c) * cin];
                for (int ic = 0; ic < cin; ++ic) dst[ic * 9] = src[ic];
            }
        }
    }
}

// 3x3 convolution, zero padding 1, stride 1 or 2; weights [oc][ic][ky][kx]
inline ImageBuffer conv3x3(const ImageBuffer& in, const double* w, const double* b, int c_out,
                           int stride) {
    const int ho = in.height / stride, wo = in.width / stride;
    const int taps = in.channels * 9;
    ImageBuffer out(ho, wo, c_out);
    std::vector<double> patch(static_cast<std::size_t>(taps));
    for (int ro = 0; ro < ho; ++ro)
        for (int co = 0; co < wo; ++co) {
            gather_patch(in, ro, co, stride, patch.data());
            double* orow = &out.data[(static_cast<std::size_t>(ro) * wo + co) * c_out];
            for (int oc = 0; oc < c_out; ++oc) {
                const double* wk = w + static_cast<std::size_t>(oc) * taps;
                double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                int k = 0;
                for (; k + 4 <= taps; k += 4) {
                    a0 += patch[static_cast<std::size_t>(k)] * wk[k];
                    a1 += patch[static_cast<std::size_t>(k) + 1] * wk[k + 1];
                    a2 += patch[static_cast<std::size_t>(k) + 2] * wk[k + 2];
                    a3 += patch[static_cast<std::size_t>(k) + 3] * wk[k + 3];
                }
                for (; k < taps; ++k) a0 += patch[static_cast<std::size_t>(k)] * wk[k];
                orow[oc] = b[oc] + ((a0 + a1) + (a2 + a3));
            }
        }
    return out;
}

inline void conv3x3_backward(const ImageBuffer& in, const double* w, int c_out, int stride,
                             const ImageBuffer& dout, ImageBuffer* din, double* dw, double* db) {
    const int cin = in.channels, taps = cin * 9;
    std::vector<double> patch(static_cast<std::size_t>(taps));
    std::vector<double> dpatch(static_cast<std::size_t>(taps));
    for (int ro = 0; ro < dout.height; ++ro)
        for (int co = 0; co < dout.width; ++co) {
            gather_patch(in, ro, co, stride, patch.data());
            std::fill(dpatch.begin(), dpatch.end(), 0.0);
            bool any = false;
            const double* grow =
                &dout.data[(static_cast<std::size_t>(ro) * dout.width + co) * c_out];
            for (int oc = 0; oc < c_out; ++oc) {
                const double g = grow[oc];
                if (g == 0.0) continue;
                any = true;
                db[oc] += g;
                const double* wk = w + static_cast<std::size_t>(oc) * taps;
                double* dwk = dw + static_cast<std::size_t>(oc) * taps;
                for (int k = 0; k < taps; ++k) {
                    dwk[k] += g * patch[static_cast<std::size_t>(k)];
                    dpatch[static_cast<std::size_t>(k)] += g * wk[k];
                }
            }
            if (!din || !any) continue;
            for (int ky = 0; ky < 3; ++ky) {
                const int r = ro * stride + ky - 1;
                if (r < 0 || r >= in.height) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int c = co * stride + kx - 1;
                    if (c < 0 || c >= in.width) continue;
                    double* dst = &din->data[(static_cast<std::size_t>(r) * in.width + c) * cin];
                    const double* sp = dpatch.data() + ky * 3 + kx;
                    for (int ic = 0; ic < cin; ++ic) dst[ic] += sp[ic * 9];
                }
            }
        }
}

}  // namespace detail

struct TokenMat {
    int n = 0, c = 0;
    std::vector<double> v;  // row-major, token n at v[n*c .. n*c+c)
    TokenMat() = default;
    TokenMat(int n_, int c_) : n(n_), c(c_), v(static_cast<std::size_t>(n_) * c_, 0.0) {}
    double& at(int i, int j) { return v[static_cast<std::size_t>(i) * c + j]; }
    double at(int i, int j) const { return v[static_cast<std::size_t>(i) * c + j]; }
};

// row-major spatial enumeration; channels stay together per token
inline TokenMat flatten_spatial(const ImageBuffer& f) {
    TokenMat t(f.height * f.width, f.channels);
    t.v = f.data;
    return t;
}

inline ImageBuffer unflatten_spatial(const TokenMat& t, int height, int width) {
    if (t.n != height * width) throw std::invalid_argument("unflatten_spatial: token count mismatch");
    ImageBuffer f(height, width, t.c);
    f.data = t.v;
    return f;
}

namespace detail {

inline void softmax_row_inplace(double* s, int n) {
    double mx = s[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, s[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        s[j] = std::exp(s[j] - mx);
        sum += s[j];
    }
    for (int j = 0; j < n; ++j) s[j] /= sum;
}

struct AttnCache {
    TokenMat Q, K, V, P;  // P row i = attention weights of query i
};

// queries from F (condition), keys/values from L (backbone); scores scaled
// by 1/sqrt(d) with d = channel count; output has F's token count
inline TokenMat attention_forward(const TokenMat& F, const TokenMat& L, const double* wq,
                                  const double* wk, const double* wv, int C,
                                  AttnCache* cache) {
    if (F.c != C || L.c != C) throw std::invalid_argument("attention: channel dims mismatch");
    const int nq = F.n, nk = L.n;
    TokenMat Q(nq, C), K(nk, C), V(nk, C);
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < C; ++j) {
            double acc = 0.0;
            for (int k = 0; k < C; ++k) acc += F.at(i, k) * wq[k * C + j];
            Q.at(i, j) = acc;
        }
    for (int i = 0; i < nk; ++i)
        for (int j = 0; j < C; ++j) {
            double ak = 0.0, av = 0.0;
            for (int k = 0; k < C; ++k) {
                ak += L.at(i, k) * wk[k * C + j];
                av += L.at(i, k) * wv[k * C + j];
            }
            K.at(i, j) = ak;
            V.at(i, j) = av;
        }
    const double scale = 1.0 / std::sqrt(static_cast<double>(C));
    TokenMat O(nq, C);
    std::vector<double> row(static_cast<std::size_t>(nk));
    TokenMat P;
    if (cache) P = TokenMat(nq, nk);
    for (int i = 0; i < nq; ++i) {
        const double* qrow = &Q.v[static_cast<std::size_t>(i) * C];
        for (int j = 0; j < nk; ++j) {
            const double* krow = &K.v[static_cast<std::size_t>(j) * C];
            double a0 = 0.0, a1 = 0.0;
            int k = 0;
            for (; k + 2 <= C; k += 2) {
                a0 += qrow[k] * krow[k];
                a1 += qrow[k + 1] * krow[k + 1];
            }
            if (k < C) a0 += qrow[k] * krow[k];
            row[static_cast<std::size_t>(j)] = (a0 + a1) * scale;
        }
        softmax_row_inplace(row.data(), nk);
        double* orow = &O.v[static_cast<std::size_t>(i) * C];
        for (int j = 0; j < nk; ++j) {
            const double p = row[static_cast<std::size_t>(j)];
            if (cache) P.at(i, j) = p;
            const double* vrow = &V.v[static_cast<std::size_t>(j) * C];
            for (int k = 0; k < C; ++k) orow[k] += p * vrow[k];
        }
    }
    if (cache) {
        cache->Q = std::move(Q);
        cache->K = std::move(K);
        cache->V = std::move(V);
        cache->P = std::move(P);
    }
    return O;
}

inline void attention_backward(const TokenMat& F, const TokenMat& L, const double* wq,
                               const double* wk, const double* wv, int C, const AttnCache& cache,
                               const TokenMat& dO, TokenMat& dF, TokenMat& dL, double* dwq,
                               double* dwk, double* dwv) {
    const int nq = F.n, nk = L.n;
    const double scale = 1.0 / std::sqrt(static_cast<double>(C));
    TokenMat dQ(nq, C), dK(nk, C), dV(nk, C);
    // dV = P^T dO, accumulated row by row so P streams in storage order
    for (int i = 0; i < nq; ++i) {
        const double* prow = &cache.P.v[static_cast<std::size_t>(i) * nk];
        const double* dorow = &dO.v[static_cast<std::size_t>(i) * C];
        for (int j = 0; j < nk; ++j) {
            const double p = prow[j];
            double* dvrow = &dV.v[static_cast<std::size_t>(j) * C];
            for (int k = 0; k < C; ++k) dvrow[k] += p * dorow[k];
        }
    }
    // dS via softmax jacobian, then dQ, dK
    std::vector<double> dp(static_cast<std::size_t>(nk));
    for (int i = 0; i < nq; ++i) {
        const double* dorow = &dO.v[static_cast<std::size_t>(i) * C];
        const double* prow = &cache.P.v[static_cast<std::size_t>(i) * nk];
        double dot = 0.0;
        for (int j = 0; j < nk; ++j) {
            const double* vrow = &cache.V.v[static_cast<std::size_t>(j) * C];
            double a0 = 0.0, a1 = 0.0;
            int k = 0;
            for (; k + 2 <= C; k += 2) {
                a0 += dorow[k] * vrow[k];
                a1 += dorow[k + 1] * vrow[k + 1];
            }
            if (k < C) a0 += dorow[k] * vrow[k];
            const double acc = a0 + a1;
            dp[static_cast<std::size_t>(j)] = acc;
            dot += acc * prow[j];
        }
        const double* qrow = &cache.Q.v[static_cast<std::size_t>(i) * C];
        double* dqrow = &dQ.v[static_cast<std::size_t>(i) * C];
        for (int j = 0; j < nk; ++j) {
            const double ds = prow[j] * (dp[static_cast<std::size_t>(j)] - dot) * scale;
            if (ds == 0.0) continue;
            const double* krow = &cache.K.v[static_cast<std::size_t>(j) * C];
            double* dkrow = &dK.v[static_cast<std::size_t>(j) * C];
            for (int k = 0; k < C; ++k) {
                dqrow[k] += ds * krow[k];
                dkrow[k] += ds * qrow[k];
            }
        }
    }
    // project back through the three linear maps
    for (int i = 0; i < nq; ++i)
        for (int k = 0; k < C; ++k)
            for (int j = 0; j < C; ++j) {
                dwq[k * C + j] += F.at(i, k) * dQ.at(i, j);
                dF.at(i, k) += dQ.at(i, j) * wq[k * C + j];
            }
    for (int i = 0; i < nk; ++i)
        for (int k = 0; k < C; ++k)
            for (int j = 0; j < C; ++j) {
                dwk[k * C + j] += L.at(i, k) * dK.at(i, j);
                dwv[k * C + j] += L.at(i, k) * dV.at(i, j);
                dL.at(i, k) += dK.at(i, j) * wk[k * C + j] + dV.at(i, j) * wv[k * C + j];
            }
}

}  // namespace detail

// standalone cross-attention; `weights` (optional) receives the row-
// stochastic attention matrix
inline TokenMat cross_attention(const TokenMat& F, const TokenMat& L, const std::vector<double>& wq,
                                const std::vector<double>& wk, const std::vector<double>& wv,
                                TokenMat* weights = nullptr) {
    const int C = F.c;
    if (static_cast<int>(wq.size()) != C * C || static_cast<int>(wk.size()) != C * C ||
        static_cast<int>(wv.size()) != C * C)
        throw std::invalid_argument("cross_attention: projection dims mismatch");
    detail::AttnCache cache;
    TokenMat O = detail::attention_forward(F, L, wq.data(), wk.data(), wv.data(), C,
                                           weights ? &cache : nullptr);
    if (weights) *weights = std::move(cache.P);
    return O;
}

struct TinyDenoiser {
    NetConfig cfg;
    std::vector<double> theta;

    explicit TinyDenoiser(const NetConfig& c = {}) : cfg(c) {
        if (c.temb % 2 != 0 || c.temb < 2) throw std::invalid_argument("NetConfig: temb must be even");
        theta.assign(static_cast<std::size_t>(detail::make_layout(c).total), 0.0);
    }

    int param_count() const { return detail::make_layout(cfg).total; }
};

inline void init_params(TinyDenoiser& net, std::uint64_t seed) {
    const NetConfig& c = net.cfg;
    const detail::ParamLayout L = detail::make_layout(c);
    CounterRng rng(derive_key(seed, 0x7E7));
    auto fill = [&](int at, int count, double scale) {
        for (int i = 0; i < count; ++i) net.theta[static_cast<std::size_t>(at + i)] = scale * rng.normal();
    };
    fill(L.conv_in_w, c.c0 * 6 * 9, std::sqrt(1.0 / (6 * 9)));
    fill(L.proj0_w, c.c0 * c.temb, std::sqrt(1.0 / c.temb));
    fill(L.proj1_w, c.c1 * c.temb, std::sqrt(1.0 / c.temb));
    fill(L.ill0_w, c.c0 * 9, std::sqrt(1.0 / 9));
    fill(L.ill1_w, c.c1 * c.c0 * 9, std::sqrt(1.0 / (c.c0 * 9)));
    fill(L.wq0, c.c0 * c.c0, std::sqrt(1.0 / c.c0));
    fill(L.wk0, c.c0 * c.c0, std::sqrt(1.0 / c.c0));
    fill(L.wv0, c.c0 * c.c0, std::sqrt(1.0 / c.c0));
    fill(L.wq1, c.c1 * c.c1, std::sqrt(1.0 / c.c1));
    fill(L.wk1, c.c1 * c.c1, std::sqrt(1.0 / c.c1));
    fill(L.wv1, c.c1 * c.c1, std::sqrt(1.0 / c.c1));
    fill(L.down_w, c.c1 * c.c0 * 9, std::sqrt(1.0 / (c.c0 * 9)));
    fill(L.up_w, c.c0 * c.c1 * 9, std::sqrt(1.0 / (c.c1 * 9)));
    // small output head so the initial prediction is near zero
    fill(L.out_w, 3 * c.c0 * 9, 0.05 * std::sqrt(1.0 / (c.c0 * 9)));
    // biases stay zero
}

inline std::vector<double> time_embedding(int t, int K) {
    std::vector<double> e(static_cast<std::size_t>(K));
    const int half = K / 2;
    for (int j = 0; j < half; ++j) {
        const double omega = std::exp(-std::log(10000.0) * j / half);
        e[static_cast<std::size_t>(2 * j)] = std::sin(t * omega);
        e[static_cast<std::size_t>(2 * j + 1)] = std::cos(t * omega);
    }
    return e;
}

namespace detail {

struct ForwardCache {
    ImageBuffer X;            // concat input
    std::vector<double> temb;
    ImageBuffer A0, L0;       // full-res backbone pre-act / act
    ImageBuffer B0, G0;       // full-res illum pre-act / act
    AttnCache at0;
    ImageBuffer L0a;
    ImageBuffer A1, L1;       // half-res backbone
    ImageBuffer B1, G1;       // half-res illum
    AttnCache at1;
    ImageBuffer L1a;
    ImageBuffer Uin, A2, U;   // decoder
    ImageBuffer Usk;
    ForwardCache()
        : X(1, 1, 1), A0(1, 1, 1), L0(1, 1, 1), B0(1, 1, 1), G0(1, 1, 1), L0a(1, 1, 1),
          A1(1, 1, 1), L1(1, 1, 1), B1(1, 1, 1), G1(1, 1, 1), L1a(1, 1, 1), Uin(1, 1, 1),
          A2(1, 1, 1), U(1, 1, 1), Usk(1, 1, 1) {}
};

inline ImageBuffer silu_map(const ImageBuffer& a) {
    ImageBuffer out(a.height, a.width, a.channels);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = silu(a.data[i]);
    return out;
}

inline void add_channel_bias(ImageBuffer& a, const std::vector<double>& e) {
    for (int r = 0; r < a.height; ++r)
        for (int c = 0; c < a.width; ++c)
            for (int ch = 0; ch < a.channels; ++ch) a.at(r, c, ch) += e[static_cast<std::size_t>(ch)];
}

inline ImageBuffer upsample2(const ImageBuffer& in) {
    ImageBuffer out(in.height * 2, in.width * 2, in.channels);
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c)
            for (int ch = 0; ch < in.channels; ++ch) out.at(r, c, ch) = in.at(r / 2, c / 2, ch);
    return out;
}

inline ImageBuffer net_forward(const TinyDenoiser& net, const ImageBuffer& x_t,
                               const ImageBuffer& degraded, const ImageBuffer& illu, int t,
                               bool inject, ForwardCache* cache) {
    const NetConfig& c = net.cfg;
    const ParamLayout L = make_layout(c);
    const double* th = net.theta.data();
    const int H = x_t.height, W = x_t.width;
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("denoise_predict: dims must be even");
    if (degraded.height != H || degraded.width != W || illu.height != H || illu.width != W)
        throw std::invalid_argument("denoise_predict: conditioning dims mismatch");
    if (x_t.channels != 3 || degraded.channels != 3 || illu.channels != 1)
        throw std::invalid_argument("denoise_predict: channel contract is 3+3+1");

    ImageBuffer X(H, W, 6);
    for (int r = 0; r < H; ++r)
        for (int cc = 0; cc < W; ++cc) {
            for (int ch = 0; ch < 3; ++ch) {
                X.at(r, cc, ch) = x_t.at(r, cc, ch);
                X.at(r, cc, 3 + ch) = degraded.at(r, cc, ch);
            }
        }
    const std::vector<double> temb = time_embedding(t, c.temb);
    auto proj = [&](int wat, int bat, int cout) {
        std::vector<double> e(static_cast<std::size_t>(cout));
        for (int o = 0; o < cout; ++o) {
            double acc = th[bat + o];
            for (int k = 0; k < c.temb; ++k) acc += th[wat + o * c.temb + k] * temb[static_cast<std::size_t>(k)];
            e[static_cast<std::size_t>(o)] = acc;
        }
        return e;
    };
    const std::vector<double> e0 = proj(L.proj0_w, L.proj0_b, c.c0);
    const std::vector<double> e1 = proj(L.proj1_w, L.proj1_b, c.c1);

    ImageBuffer A0 = conv3x3(X, th + L.conv_in_w, th + L.conv_in_b, c.c0, 1);
    add_channel_bias(A0, e0);
    ImageBuffer L0 = silu_map(A0);

    ImageBuffer B0 = conv3x3(illu, th + L.ill0_w, th + L.ill0_b, c.c0, 1);
    ImageBuffer G0 = silu_map(B0);

    ImageBuffer L0a = L0;
    if (inject) {
        const TokenMat tG0 = flatten_spatial(G0), tL0 = flatten_spatial(L0);
        TokenMat O0 = attention_forward(tG0, tL0, th + L.wq0, th + L.wk0, th + L.wv0, c.c0,
                                        cache ? &cache->at0 : nullptr);
        for (std::size_t i = 0; i < L0a.data.size(); ++i) L0a.data[i] += O0.v[i];
    }

    ImageBuffer A1 = conv3x3(L0a, th + L.down_w, th + L.down_b, c.c1, 2);
    add_channel_bias(A1, e1);
    ImageBuffer L1 = silu_map(A1);

    ImageBuffer B1 = conv3x3(G0, th + L.ill1_w, th + L.ill1_b, c.c1, 2);
    ImageBuffer G1 = silu_map(B1);

    ImageBuffer L1a = L1;
    if (inject) {
        const TokenMat tG1 = flatten_spatial(G1), tL1 = flatten_spatial(L1);
        TokenMat O1 = attention_forward(tG1, tL1, th + L.wq1, th + L.wk1, th + L.wv1, c.c1,
                                        cache ? &cache->at1 : nullptr);
        for (std::size_t i = 0; i < L1a.data.size(); ++i) L1a.data[i] += O1.v[i];
    }

    ImageBuffer Uin = upsample2(L1a);
    ImageBuffer A2 = conv3x3(Uin, th + L.up_w, th + L.up_b, c.c0, 1);
    ImageBuffer U = silu_map(A2);
    ImageBuffer Usk = U;
    for (std::size_t i = 0; i < Usk.data.size(); ++i) Usk.data[i] += L0a.data[i];

    ImageBuffer out = conv3x3(Usk, th + L.out_w, th + L.out_b, 3, 1);

    if (cache) {
        cache->X = std::move(X);
        cache->temb = temb;
        cache->A0 = std::move(A0);
        cache->L0 = std::move(L0);
        cache->B0 = std::move(B0);
        cache->G0 = std::move(G0);
        cache->L0a = std::move(L0a);
        cache->A1 = std::move(A1);
        cache->L1 = std::move(L1);
        cache->B1 = std::move(B1);
        cache->G1 = std::move(G1);
        cache->L1a = std::move(L1a);
        cache->Uin = std::move(Uin);
        cache->A2 = std::move(A2);
        cache->U = std::move(U);
        cache->Usk = std::move(Usk);
    }
    return out;
}

inline void silu_backward_inplace(const ImageBuffer& pre, ImageBuffer& grad) {
    for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] *= silu_grad(pre.data[i]);
}

// accumulates d(theta) into dtheta for one sample given d(out)
inline void net_backward(const TinyDenoiser& net, const ForwardCache& cc, const ImageBuffer& illu,
                         bool inject, const ImageBuffer& dout, double* dtheta) {
    const NetConfig& c = net.cfg;
    const ParamLayout L = make_layout(c);
    const double* th = net.theta.data();
    const int H = cc.L0.height, W = cc.L0.width;

    // out conv
    ImageBuffer dUsk(H, W, c.c0);
    conv3x3_backward(cc.Usk, th + L.out_w, 3, 1, dout, &dUsk, dtheta + L.out_w, dtheta + L.out_b);

    // skip: Usk = U + L0a
    ImageBuffer dU = dUsk;
    ImageBuffer dL0a = dUsk;

    // decoder conv
    silu_backward_inplace(cc.A2, dU);
    ImageBuffer dUin(H, W, c.c1);
    conv3x3_backward(cc.Uin, th + L.up_w, c.c0, 1, dU, &dUin, dtheta + L.up_w, dtheta + L.up_b);

    // upsample2: each half-res cell collects its 2x2 block
    ImageBuffer dL1a(H / 2, W / 2, c.c1);
    for (int r = 0; r < H; ++r)
        for (int cw = 0; cw < W; ++cw)
            for (int ch = 0; ch < c.c1; ++ch) dL1a.at(r / 2, cw / 2, ch) += dUin.at(r, cw, ch);

    ImageBuffer dL1 = dL1a;
    ImageBuffer dG1(H / 2, W / 2, c.c1);
    if (inject) {
        const TokenMat tG1 = flatten_spatial(cc.G1), tL1 = flatten_spatial(cc.L1);
        TokenMat dO(tG1.n, c.c1);
        dO.v = dL1a.data;
        TokenMat dFt(tG1.n, c.c1), dLt(tL1.n, c.c1);
        attention_backward(tG1, tL1, th + L.wq1, th + L.wk1, th + L.wv1, c.c1, cc.at1, dO, dFt,
                           dLt, dtheta + L.wq1, dtheta + L.wk1, dtheta + L.wv1);
        for (std::size_t i = 0; i < dL1.data.size(); ++i) dL1.data[i] += dLt.v[i];
        dG1.data = dFt.v;
    }

    // half-res illum conv (queries side)
    ImageBuffer dG0(H, W, c.c0);
    {
        silu_backward_inplace(cc.B1, dG1);
        conv3x3_backward(cc.G0, th + L.ill1_w, c.c1, 2, dG1, &dG0, dtheta + L.ill1_w,
                         dtheta + L.ill1_b);
    }

    // down conv + its time projection
    silu_backward_inplace(cc.A1, dL1);
    for (int r = 0; r < H / 2; ++r)
        for (int cw = 0; cw < W / 2; ++cw)
            for (int ch = 0; ch < c.c1; ++ch) {
                const double g = dL1.at(r, cw, ch);
                dtheta[L.proj1_b + ch] += g;
                for (int k = 0; k < c.temb; ++k)
                    dtheta[L.proj1_w + ch * c.temb + k] += g * cc.temb[static_cast<std::size_t>(k)];
            }
    conv3x3_backward(cc.L0a, th + L.down_w, c.c1, 2, dL1, &dL0a, dtheta + L.down_w,
                     dtheta + L.down_b);

    ImageBuffer dL0 = dL0a;
    if (inject) {
        const TokenMat tG0 = flatten_spatial(cc.G0), tL0 = flatten_spatial(cc.L0);
        TokenMat dO(tG0.n, c.c0);
        dO.v = dL0a.data;
        TokenMat dFt(tG0.n, c.c0), dLt(tL0.n, c.c0);
        attention_backward(tG0, tL0, th + L.wq0, th + L.wk0, th + L.wv0, c.c0, cc.at0, dO, dFt,
                           dLt, dtheta + L.wq0, dtheta + L.wk0, dtheta + L.wv0);
        for (std::size_t i = 0; i < dL0.data.size(); ++i) dL0.data[i] += dLt.v[i];
        for (std::size_t i = 0; i < dG0.data.size(); ++i) dG0.data[i] += dFt.v[i];
    }

    // full-res illum conv
    {
        ImageBuffer dB0 = dG0;
        silu_backward_inplace(cc.B0, dB0);
        conv3x3_backward(illu, th + L.ill0_w, c.c0, 1, dB0, nullptr, dtheta + L.ill0_w,
                         dtheta + L.ill0_b);
    }

    // input conv + its time projection
    silu_backward_inplace(cc.A0, dL0);
    for (int r = 0; r < H; ++r)
        for (int cw = 0; cw < W; ++cw)
            for (int ch = 0; ch < c.c0; ++ch) {
                const double g = dL0.at(r, cw, ch);
                dtheta[L.proj0_b + ch] += g;
                for (int k = 0; k < c.temb; ++k)
                    dtheta[L.proj0_w + ch * c.temb + k] += g * cc.temb[static_cast<std::size_t>(k)];
            }
    conv3x3_backward(cc.X, th + L.conv_in_w, c.c0, 1, dL0, nullptr, dtheta + L.conv_in_w,
                     dtheta + L.conv_in_b);
}

}  // namespace detail

inline ImageBuffer denoise_predict(const TinyDenoiser& net, const ImageBuffer& x_t,
                                   const ImageBuffer& degraded, const ImageBuffer& illu, int t,
                                   bool inject = true) {
    return detail::net_forward(net, x_t, degraded, illu, t, inject, nullptr);
}

inline Denoiser make_denoiser(const TinyDenoiser& net, bool inject = true) {
    return [&net, inject](const ImageBuffer& x_t, const ImageBuffer& degraded,
                          const ImageBuffer& illu, int t) {
        return denoise_predict(net, x_t, degraded, illu, t, inject);
    };
}

struct TrainItem {
    ImageBuffer clean, degraded, illum;
    int t = 1;
    ImageBuffer eps;
    TrainItem() : clean(1, 1, 1), degraded(1, 1, 1), illum(1, 1, 1), eps(1, 1, 1) {}
};

// mean over items of the noise-prediction MSE, gradient accumulated into
// `grad` (resized and zeroed here); masked coordinates are forced to 0
inline double loss_and_gradient(const TinyDenoiser& net, const std::vector<TrainItem>& items,
                                const NoiseSchedule& sched, bool inject, std::vector<double>& grad,
                                const std::vector<std::uint8_t>* freeze_mask = nullptr) {
    if (items.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
    grad.assign(net.theta.size(), 0.0);
    double total = 0.0;
    for (const TrainItem& it : items) {
        const ImageBuffer x_t = forward_sample(it.clean, it.t, it.eps, sched);
        detail::ForwardCache cache;
        const ImageBuffer pred = detail::net_forward(net, x_t, it.degraded, it.illum, it.t, inject, &cache);
        const double inv_n = 1.0 / static_cast<double>(pred.data.size());
        ImageBuffer dout(pred.height, pred.width, pred.channels);
        double loss = 0.0;
        for (std::size_t i = 0; i < pred.data.size(); ++i) {
            const double d = pred.data[i] - it.eps.data[i];
            loss += d * d;
            dout.data[i] = 2.0 * d * inv_n;
        }
        total += loss * inv_n;
        detail::net_backward(net, cache, it.illum, inject, dout, grad.data());
    }
    const double inv_b = 1.0 / static_cast<double>(items.size());
    for (double& g : grad) g *= inv_b;
    total *= inv_b;
    if (freeze_mask) {
        if (freeze_mask->size() != grad.size())
            throw std::invalid_argument("loss_and_gradient: freeze mask size mismatch");
        for (std::size_t i = 0; i < grad.size(); ++i)
            if ((*freeze_mask)[i]) grad[i] = 0.0;
    }
    return total;
}

struct TrainResult {
    std::vector<double> trace;
    bool diverged = false;
};

// Full-batch gradient descent.  Each item gets one fixed timestep and one
// fixed noise draw up front, so the objective is a deterministic finite sum:
// the trace is exactly flat at learning rate 0 and exactly reproducible per
// seed.
inline TrainResult train_toy(TinyDenoiser& net, std::vector<TrainItem>& data, int steps, double lr,
                             std::uint64_t seed, const NoiseSchedule& sched, bool inject = true) {
    if (data.size() < 64) throw std::invalid_argument("train_toy: need at least 64 triples");
    CounterRng rng(derive_key(seed, 0xA));
    for (TrainItem& it : data) {
        it.t = rng.uniform_int(1, sched.T);
        it.eps = normal_field(rng, it.clean.height, it.clean.width, it.clean.channels);
    }
    TrainResult res;
    res.trace.reserve(static_cast<std::size_t>(steps));
    std::vector<double> grad;
    for (int s = 0; s < steps; ++s) {
        const double loss = loss_and_gradient(net, data, sched, inject, grad);
        res.trace.push_back(loss);
        // NaN-safe: a non-finite loss must abort too
        if (!(loss <= 10.0 * res.trace.front())) {
            res.diverged = true;
            return res;
        }
        for (std::size_t i = 0; i < net.theta.size(); ++i) net.theta[i] -= lr * grad[i];
    }
    return res;
}

inline void save_model(const TinyDenoiser& net, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_model: cannot open " + path);
    const char magic[4] = {'N', 'F', 'T', 'D'};
    f.write(magic, 4);
    auto put_u32 = [&f](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(1u);
    put_u32(static_cast<std::uint32_t>(net.cfg.c0));
    put_u32(static_cast<std::uint32_t>(net.cfg.c1));
    put_u32(static_cast<std::uint32_t>(net.cfg.temb));
    const std::uint64_t n = net.theta.size();
    f.write(reinterpret_cast<const char*>(&n), 8);
    f.write(reinterpret_cast<const char*>(net.theta.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!f) throw std::runtime_error("save_model: short write " + path);
}

inline TinyDenoiser load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_model: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "NFTD", 4) != 0)
        throw std::runtime_error("load_model: bad magic in " + path);
    auto get_u32 = [&f]() {
        std::uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    const std::uint32_t version = get_u32();
    if (version != 1u) throw std::runtime_error("load_model: unsupported version");
    NetConfig cfg;
    cfg.c0 = static_cast<int>(get_u32());
    cfg.c1 = static_cast<int>(get_u32());
    cfg.temb = static_cast<int>(get_u32());
    std::uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 8);
    TinyDenoiser net(cfg);
    if (n != net.theta.size())
        throw std::runtime_error("load_model: parameter count does not match architecture");
    f.read(reinterpret_cast<char*>(net.theta.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!f) throw std::runtime_error("load_model: truncated file " + path);
    return net;
}

}  // namespace nightforge
