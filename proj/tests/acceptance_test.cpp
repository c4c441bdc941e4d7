// Acceptance gate: ten pinned criteria, each printing one summary line.
// Run the binary directly (or via ctest) to see the [ACCEPT] report.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "nightforge/pipeline.hpp"
#include "test_util.hpp"

using nightforge::CounterRng;
using nightforge::derive_key;
using nightforge::ImageBuffer;
using nightforge::NoiseSchedule;

namespace {

constexpr double kToyLr = 0.1;  // toy-training learning rate, shared by criteria 7 and 8

class Acceptance : public ::testing::Test {
  protected:
    void Begin(int number, const char* label, double budget_seconds) {
        number_ = number;
        label_ = label;
        budget_ = budget_seconds;
        start_ = std::chrono::steady_clock::now();
    }

    void TearDown() override {
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        EXPECT_LT(elapsed, budget_) << "criterion " << number_ << " exceeded its time budget";
        std::printf("[ACCEPT] criterion %2d %-28s %s (%.2f s, budget %.0f s)\n", number_, label_,
                    HasFailure() ? "FAIL" : "PASS", elapsed, budget_);
        std::fflush(stdout);
    }

  private:
    int number_ = 0;
    const char* label_ = "";
    double budget_ = 0.0;
    std::chrono::steady_clock::time_point start_;
};

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// scalar exposure curve, kept deliberately naive
double ref_curve(double x, double a, int n) {
    for (int i = 0; i < n; ++i) x = x + a * x * (1.0 - x);
    return x;
}

std::vector<nightforge::TrainItem> synthesize_triples(std::uint64_t seed, int count) {
    std::vector<nightforge::TrainItem> items(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const std::uint64_t key = derive_key(seed, static_cast<std::uint64_t>(i));
        const ImageBuffer clean = testutil::smooth_image(key, 32, 32, 3);
        const auto kind = static_cast<nightforge::DegradationKind>(i % 5);
        CounterRng prng(derive_key(key, 1));
        const auto wp = nightforge::sample_weather_params(kind, prng, derive_key(key, 2));
        CounterRng erng(derive_key(key, 3));
        const double e = nightforge::sample_exposure(erng);
        nightforge::WeatherRecord rec;
        const ImageBuffer degraded =
            nightforge::degrade_image(clean, kind, wp, e, 0.1, derive_key(key, 4), &rec);
        nightforge::TrainItem it;
        it.clean = nightforge::resize_area(clean, 16, 16);
        it.degraded = nightforge::resize_area(degraded, 16, 16);
        it.illum = nightforge::estimate_illumination(it.degraded);
        items[static_cast<std::size_t>(i)] = std::move(it);
    }
    return items;
}

}  // namespace

TEST_F(Acceptance, C01_CompositingOracles) {
    Begin(1, "compositing oracles", 5.0);
    CounterRng rng(derive_key(101, 0));
    const int H = 8, W = 8;
    for (int inst = 0; inst < 100; ++inst) {
        const ImageBuffer C = testutil::random_image(derive_key(200, inst), H, W, 3);
        ImageBuffer M(H, W, 1), T(H, W, 1), R(H, W, 3), S(H, W, 3);
        for (double& v : M.data) v = rng.uniform01();
        for (double& v : T.data) v = rng.uniform01();
        for (double& v : R.data) v = rng.uniform(0.0, 0.5);
        for (double& v : S.data) v = rng.uniform(0.8, 1.0);
        const std::array<double, 3> A = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
        std::vector<ImageBuffer> layers;
        layers.push_back(R);
        layers.push_back(S);

        const ImageBuffer raindrop = nightforge::composite_raindrop(C, M, R);
        const ImageBuffer rain = nightforge::composite_rain(C, layers, T, A);
        const ImageBuffer snow = nightforge::composite_snow(C, M, S);
        const ImageBuffer haze = nightforge::composite_haze(C, T, A);

        double worst = 0.0;
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const double m = M.at(r, c, 0);
                const double t = T.at(r, c, 0);
                for (int ch = 0; ch < 3; ++ch) {
                    const double cc = C.at(r, c, ch);
                    const double e1 = clamp01((1.0 - m) * cc + R.at(r, c, ch));
                    const double e2 = clamp01(t * (cc + R.at(r, c, ch) + S.at(r, c, ch)) +
                                              (1.0 - t) * A[static_cast<std::size_t>(ch)]);
                    const double e3 = clamp01((1.0 - m) * cc + m * S.at(r, c, ch));
                    const double e4 =
                        clamp01(t * cc + (1.0 - t) * A[static_cast<std::size_t>(ch)]);
                    worst = std::max(worst, std::abs(raindrop.at(r, c, ch) - e1));
                    worst = std::max(worst, std::abs(rain.at(r, c, ch) - e2));
                    worst = std::max(worst, std::abs(snow.at(r, c, ch) - e3));
                    worst = std::max(worst, std::abs(haze.at(r, c, ch) - e4));
                }
            }
        ASSERT_LE(worst, 1e-12) << "instance " << inst;
    }

    // identity and degenerate cases are exact
    const ImageBuffer C = testutil::random_image(42, H, W, 3);
    const ImageBuffer zeros1(H, W, 1, 0.0), zeros3(H, W, 3, 0.0);
    const ImageBuffer ones1(H, W, 1, 1.0);
    const std::array<double, 3> A = {0.7, 0.8, 0.9};
    EXPECT_EQ(testutil::max_abs_diff(nightforge::composite_raindrop(C, zeros1, zeros3), C), 0.0);
    EXPECT_EQ(testutil::max_abs_diff(nightforge::composite_rain(C, {}, ones1, A), C), 0.0);
    EXPECT_EQ(testutil::max_abs_diff(nightforge::composite_snow(C, zeros1, zeros3), C), 0.0);
    EXPECT_EQ(testutil::max_abs_diff(nightforge::composite_haze(C, ones1, A), C), 0.0);
    const ImageBuffer veil = nightforge::composite_haze(C, zeros1, A);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            for (int ch = 0; ch < 3; ++ch)
                ASSERT_EQ(veil.at(r, c, ch), A[static_cast<std::size_t>(ch)]);
}

TEST_F(Acceptance, C02_ExposureCurveSuite) {
    Begin(2, "exposure-curve suite", 10.0);
    const int n = 10;
    int monotone_violations = 0, darkening_violations = 0;
    std::vector<double> xs(200), as(200);
    for (int i = 0; i < 200; ++i) {
        xs[static_cast<std::size_t>(i)] = static_cast<double>(i) / 199.0;
        as[static_cast<std::size_t>(i)] = -1.0 + static_cast<double>(i) / 199.0;
    }
    for (double a : as) {
        double prev = -1.0;
        for (double x : xs) {
            const double y = nightforge::ec_curve_scalar(x, a, n);
            if (y < prev) ++monotone_violations;
            if (y > x) ++darkening_violations;
            prev = y;
        }
    }
    EXPECT_EQ(monotone_violations, 0);
    EXPECT_EQ(darkening_violations, 0);

    const double floor = nightforge::exposure_floor(n);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const double target = floor + (0.5 - floor) * static_cast<double>(k) / 49.0;
        const double a = nightforge::calibrate_alpha(target, n);
        worst = std::max(worst, std::abs(ref_curve(0.5, a, n) - target));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST_F(Acceptance, C03_SamplerOracleExactness) {
    Begin(3, "sampler oracle exactness", 10.0);
    const NoiseSchedule sched = nightforge::build_schedule();
    const ImageBuffer target = testutil::smooth_image(33, 16, 16, 3);
    const ImageBuffer cond(16, 16, 3, 0.5);
    const auto den = nightforge::oracle_denoiser(target, sched);
    for (int S : {1, 5, 40}) {
        CounterRng rng(derive_key(3000, static_cast<std::uint64_t>(S)));
        const ImageBuffer out = nightforge::restore(cond, cond, den, sched, S, rng);
        EXPECT_LT(testutil::max_abs_diff(out, target), 1e-10) << "S=" << S;
    }
}

TEST_F(Acceptance, C04_TiledFullEquivalence) {
    Begin(4, "tiled/full equivalence", 60.0);
    const NoiseSchedule sched = nightforge::build_schedule();
    const ImageBuffer y = testutil::smooth_image(44, 96, 96, 3);
    const ImageBuffer illu = nightforge::estimate_illumination(y);
    const nightforge::Denoiser pointwise = [](const ImageBuffer& x, const ImageBuffer& deg,
                                              const ImageBuffer& il, int t) {
        ImageBuffer out(x.height, x.width, x.channels);
        for (int r = 0; r < x.height; ++r)
            for (int c = 0; c < x.width; ++c)
                for (int ch = 0; ch < x.channels; ++ch)
                    out.at(r, c, ch) = 0.7 * std::tanh(x.at(r, c, ch)) + 0.2 * deg.at(r, c, ch) -
                                       0.1 * il.at(r, c, 0) + 1e-4 * static_cast<double>(t);
        return out;
    };
    CounterRng r1(derive_key(45, 0)), r2(derive_key(45, 0));
    const ImageBuffer full = nightforge::restore(y, illu, pointwise, sched, 40, r1);
    const ImageBuffer tiled = nightforge::tiled_restore(y, illu, pointwise, sched, 40, 64, 16, r2);
    EXPECT_LE(testutil::max_abs_diff(full, tiled), 1e-9);
}

TEST_F(Acceptance, C05_GridStepTrend) {
    Begin(5, "grid-step seam trend", 300.0);
    const NoiseSchedule sched = nightforge::build_schedule();
    const int HW = 128, p = 64, S = 10;
    const double gamma = 0.15;
    const ImageBuffer target = testutil::smooth_image(55, HW, HW, 3);
    const ImageBuffer cond(HW, HW, 3, 0.5);
    // oracle prediction plus a tile-local ramp: the bias depends on where a
    // pixel falls inside its tile, so sparse grids leave seams and dense
    // grids average the bias away
    const nightforge::TileDenoiser probe = [&](const ImageBuffer& x, const ImageBuffer&,
                                               const ImageBuffer&, int t, int r0, int c0) {
        const double sa = sched.sqrt_ab[static_cast<std::size_t>(t)];
        const double sb = sched.sqrt_one_m_ab[static_cast<std::size_t>(t)];
        ImageBuffer eps(x.height, x.width, x.channels);
        for (int r = 0; r < x.height; ++r)
            for (int c = 0; c < x.width; ++c) {
                const double ramp = (static_cast<double>(r) / p - 0.5) +
                                    (static_cast<double>(c) / p - 0.5);
                for (int ch = 0; ch < x.channels; ++ch)
                    eps.at(r, c, ch) =
                        (x.at(r, c, ch) - sa * target.at(r0 + r, c0 + c, ch)) / sb + gamma * ramp;
            }
        return eps;
    };

    std::map<int, ImageBuffer> outs;
    for (int s : {16, 64}) {
        CounterRng rng(derive_key(56, 0));
        outs.emplace(s, nightforge::tiled_restore(cond, cond, probe, sched, S, p, s, rng));
    }
    const double seam16 = nightforge::seam_score(outs.at(16), nightforge::plan_tiles(HW, HW, p, 16));
    const double seam64 = nightforge::seam_score(outs.at(64), nightforge::plan_tiles(HW, HW, p, 64));
    const double psnr16 = nightforge::psnr(outs.at(16), target);
    const double psnr64 = nightforge::psnr(outs.at(64), target);
    std::fprintf(stderr, "  grid-step trend: seam %.6f vs %.6f, psnr %.3f vs %.3f\n", seam16,
                 seam64, psnr16, psnr64);
    EXPECT_LT(seam16, seam64);
    EXPECT_GT(psnr16, psnr64);
}

TEST_F(Acceptance, C06_AttentionAndGradients) {
    Begin(6, "attention + gradients", 120.0);
    CounterRng rng(derive_key(66, 0));
    for (int trial = 0; trial < 1000; ++trial) {
        const int nf = rng.uniform_int(2, 6), nl = rng.uniform_int(2, 6), c = rng.uniform_int(2, 5);
        const double scale = std::pow(10.0, rng.uniform(0.0, 3.0));
        nightforge::TokenMat F(nf, c), L(nl, c);
        for (double& v : F.v) v = rng.uniform(-scale, scale);
        for (double& v : L.v) v = rng.uniform(-scale, scale);
        std::vector<double> wq(static_cast<std::size_t>(c) * c), wk(wq.size()), wv(wq.size());
        for (double& v : wq) v = rng.uniform(-1.0, 1.0);
        for (double& v : wk) v = rng.uniform(-1.0, 1.0);
        for (double& v : wv) v = rng.uniform(-1.0, 1.0);
        nightforge::TokenMat P;
        (void)nightforge::cross_attention(F, L, wq, wk, wv, &P);
        for (int i = 0; i < P.n; ++i) {
            double sum = 0.0;
            for (int j = 0; j < P.c; ++j) {
                ASSERT_TRUE(std::isfinite(P.at(i, j)));
                ASSERT_GE(P.at(i, j), 0.0);
                sum += P.at(i, j);
            }
            ASSERT_NEAR(sum, 1.0, 1e-9);
        }
    }

    // exhaustive finite-difference check on the sub-500-parameter model
    const nightforge::NetConfig cfg{2, 3, 4};
    nightforge::TinyDenoiser net(cfg);
    ASSERT_LE(net.param_count(), 500);
    nightforge::init_params(net, derive_key(67, 0));
    const NoiseSchedule sched = nightforge::build_schedule();
    std::vector<nightforge::TrainItem> items(2);
    CounterRng irng(derive_key(68, 0));
    for (auto& it : items) {
        it.clean = testutil::smooth_image(irng.uniform_int(1, 1 << 20), 8, 8, 3);
        it.degraded = testutil::smooth_image(irng.uniform_int(1, 1 << 20), 8, 8, 3);
        it.illum = nightforge::estimate_illumination(it.degraded);
        it.t = irng.uniform_int(1, sched.T);
        it.eps = nightforge::normal_field(irng, 8, 8, 3);
    }
    std::vector<double> grad;
    nightforge::loss_and_gradient(net, items, sched, true, grad);
    const double h = 1e-5;
    double worst_rel = 0.0;
    std::vector<double> scratch;
    for (std::size_t k = 0; k < net.theta.size(); ++k) {
        const double saved = net.theta[k];
        net.theta[k] = saved + h;
        const double lp = nightforge::loss_and_gradient(net, items, sched, true, scratch);
        net.theta[k] = saved - h;
        const double lm = nightforge::loss_and_gradient(net, items, sched, true, scratch);
        net.theta[k] = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double rel =
            std::abs(grad[k] - fd) / std::max({std::abs(grad[k]), std::abs(fd), 1e-5});
        worst_rel = std::max(worst_rel, rel);
        ASSERT_LT(rel, 1e-4) << "coordinate " << k;
    }
    std::fprintf(stderr, "  gradient check: worst relative error %.3g over %zu coordinates\n",
                 worst_rel, net.theta.size());
}

TEST_F(Acceptance, C07_ToyTrainingHalvesLoss) {
    Begin(7, "toy training halves loss", 300.0);
    const NoiseSchedule sched = nightforge::build_schedule();
    const int steps = 500;
    auto run_once = [&](std::uint64_t seed) {
        std::vector<nightforge::TrainItem> items = synthesize_triples(770, 64);
        nightforge::TinyDenoiser net;
        nightforge::init_params(net, derive_key(seed, 0x1));
        return nightforge::train_toy(net, items, steps, kToyLr, seed, sched, true);
    };
    const nightforge::TrainResult a = run_once(7001);
    ASSERT_FALSE(a.diverged);
    ASSERT_EQ(a.trace.size(), static_cast<std::size_t>(steps));
    auto smoothed = [&](std::size_t begin) {
        double acc = 0.0;
        for (std::size_t i = begin; i < begin + 20; ++i) acc += a.trace[i];
        return acc / 20.0;
    };
    const double initial = smoothed(0);
    const double final_v = smoothed(a.trace.size() - 20);
    std::fprintf(stderr, "  toy training: smoothed loss %.6f -> %.6f (ratio %.3f)\n", initial,
                 final_v, final_v / initial);
    EXPECT_LE(final_v, 0.5 * initial);

    const nightforge::TrainResult b = run_once(7001);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i)
        ASSERT_EQ(a.trace[i], b.trace[i]) << "trace diverges at step " << i;
}

TEST_F(Acceptance, C08_IlluminationAblationTrend) {
    Begin(8, "illumination ablation trend", 600.0);
    const NoiseSchedule sched = nightforge::build_schedule();
    const int steps = 500;
    auto run_arm = [&](bool inject) {
        std::vector<nightforge::TrainItem> items = synthesize_triples(880, 64);
        nightforge::TinyDenoiser net;
        nightforge::init_params(net, derive_key(8001, 0x1));
        const auto res = nightforge::train_toy(net, items, steps, kToyLr, 8001, sched, inject);
        EXPECT_FALSE(res.diverged);
        return res.trace.back();
    };
    const double with_injection = run_arm(true);
    const double without_injection = run_arm(false);
    std::fprintf(stderr, "  ablation: final loss %.8f with injection vs %.8f without\n",
                 with_injection, without_injection);
    EXPECT_LT(with_injection, without_injection);
}

TEST_F(Acceptance, C09_EndToEndDeterminism) {
    Begin(9, "end-to-end determinism", 120.0);
    testutil::TempDir corpus, scratch;
    for (int i = 0; i < 3; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "clean_%02d.png", i);
        nightforge::save_image(testutil::smooth_image(990 + static_cast<std::uint64_t>(i), 48, 48, 3),
                               corpus.file(name));
    }
    const std::string out_dir = scratch.file("out");

    std::vector<std::map<std::string, std::vector<std::uint8_t>>> snapshots;
    auto run_synth = [&](const char* kind, int jobs) {
        std::filesystem::remove_all(out_dir);
        char cmd[1024];
        std::snprintf(cmd, sizeof(cmd),
                      "\"%s\" synth --input-dir %s --output-dir %s --kind %s --seed 9090 "
                      "--count 5 --jobs %d >%s 2>%s",
                      NIGHTFORGE_CLI_PATH, corpus.str().c_str(), out_dir.c_str(), kind, jobs,
                      scratch.file("o").c_str(), scratch.file("e").c_str());
        const int status = std::system(cmd);
        ASSERT_TRUE(WIFEXITED(status));
        ASSERT_EQ(WEXITSTATUS(status), 0) << kind;
        std::map<std::string, std::vector<std::uint8_t>> bytes;
        for (const auto& e : std::filesystem::directory_iterator(out_dir))
            bytes[e.path().filename().string()] = testutil::read_bytes(e.path().string());
        ASSERT_EQ(bytes.size(), 6u);  // 5 images + manifest.json
        snapshots.push_back(std::move(bytes));
    };

    for (const char* kind : {"raindrop", "rain", "snow", "fog", "haze"}) {
        snapshots.clear();
        run_synth(kind, 1);
        run_synth(kind, 1);
        run_synth(kind, 4);
        if (HasFatalFailure()) return;
        ASSERT_EQ(snapshots.size(), 3u);
        EXPECT_EQ(snapshots[0], snapshots[1]) << kind << ": rerun not byte-identical";
        EXPECT_EQ(snapshots[0], snapshots[2]) << kind << ": --jobs 4 not byte-identical";
    }
}

TEST_F(Acceptance, C10_MetricPins) {
    Begin(10, "metric pins", 30.0);
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const ImageBuffer x = testutil::random_image(seed, 24, 24, 3);
        EXPECT_EQ(nightforge::ssim(x, x), 1.0);
    }
    const ImageBuffer zeros(16, 16, 3, 0.0), halves(16, 16, 3, 0.5);
    EXPECT_NEAR(nightforge::psnr(zeros, halves), 6.0206, 1e-3);

    // independent SSIM: plain Gaussian-window two-pass implementation
    const auto reference_ssim = [](const ImageBuffer& a, const ImageBuffer& b) {
        const ImageBuffer la = nightforge::to_luma(a), lb = nightforge::to_luma(b);
        const int H = la.height, W = la.width;
        std::vector<double> w(121);
        double wsum = 0.0;
        for (int i = 0; i < 11; ++i)
            for (int j = 0; j < 11; ++j) {
                const double dy = i - 5, dx = j - 5;
                w[static_cast<std::size_t>(i * 11 + j)] =
                    std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
                wsum += w[static_cast<std::size_t>(i * 11 + j)];
            }
        for (double& v : w) v /= wsum;
        double acc = 0.0;
        int count = 0;
        for (int r = 0; r + 11 <= H; ++r)
            for (int c = 0; c + 11 <= W; ++c) {
                double mx = 0.0, my = 0.0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        mx += w[static_cast<std::size_t>(i * 11 + j)] * la.at(r + i, c + j, 0);
                        my += w[static_cast<std::size_t>(i * 11 + j)] * lb.at(r + i, c + j, 0);
                    }
                double vx = 0.0, vy = 0.0, cxy = 0.0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const double da = la.at(r + i, c + j, 0) - mx;
                        const double db = lb.at(r + i, c + j, 0) - my;
                        const double ww = w[static_cast<std::size_t>(i * 11 + j)];
                        vx += ww * da * da;
                        vy += ww * db * db;
                        cxy += ww * da * db;
                    }
                const double C1 = 1e-4, C2 = 9e-4;
                acc += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) /
                       ((mx * mx + my * my + C1) * (vx + vy + C2));
                ++count;
            }
        return acc / count;
    };

    CounterRng rng(derive_key(1010, 0));
    double worst = 0.0;
    for (int pair = 0; pair < 20; ++pair) {
        ImageBuffer a = testutil::smooth_image(derive_key(1011, pair), 40, 40, 3);
        ImageBuffer b = a;
        for (double& v : b.data) v = clamp01(v + rng.uniform(-0.08, 0.08));
        worst = std::max(worst, std::abs(nightforge::ssim(a, b) - reference_ssim(a, b)));
    }
    std::fprintf(stderr, "  ssim cross-check: worst deviation %.3g\n", worst);
    EXPECT_LE(worst, 1e-6);
}
