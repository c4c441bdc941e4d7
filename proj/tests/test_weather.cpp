#include <gtest/gtest.h>

#include <cmath>

#include "nightforge/manifest.hpp"
#include "nightforge/weather.hpp"
#include "test_util.hpp"

using nightforge::DegradationKind;
using nightforge::ImageBuffer;

TEST(KindNames, RoundTrip) {
    for (DegradationKind k : {DegradationKind::Raindrop, DegradationKind::Rain,
                              DegradationKind::Snow, DegradationKind::Fog, DegradationKind::Haze}) {
        const auto parsed = nightforge::parse_kind(nightforge::kind_name(k));
        ASSERT_TRUE(parsed.has_value());
        EXPECT_EQ(*parsed, k);
    }
    EXPECT_FALSE(nightforge::parse_kind("drizzle").has_value());
}

TEST(CompositeRaindrop, IdentityWhenMaskZero) {
    const ImageBuffer C = testutil::random_image(1, 9, 7, 3);
    const ImageBuffer M(9, 7, 1, 0.0);
    const ImageBuffer R(9, 7, 3, 0.0);
    const ImageBuffer out = nightforge::composite_raindrop(C, M, R);
    EXPECT_EQ(out.data, C.data);
}

TEST(CompositeRaindrop, MatchesFormulaWithClamp) {
    const ImageBuffer C = testutil::random_image(2, 8, 8, 3);
    const ImageBuffer M = testutil::random_image(3, 8, 8, 1);
    const ImageBuffer R = testutil::random_image(4, 8, 8, 3, 0.0, 0.9);
    const ImageBuffer out = nightforge::composite_raindrop(C, M, R);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                double v = (1.0 - M.at(r, c)) * C.at(r, c, ch) + R.at(r, c, ch);
                v = std::min(1.0, std::max(0.0, v));
                EXPECT_NEAR(out.at(r, c, ch), v, 1e-15);
            }
}

TEST(CompositeRaindrop, RejectsMaskOutOfRange) {
    const ImageBuffer C = testutil::random_image(5, 4, 4, 3);
    ImageBuffer M(4, 4, 1, 0.5);
    M.at(1, 1) = 1.2;
    EXPECT_THROW(nightforge::composite_raindrop(C, M, ImageBuffer(4, 4, 3)),
                 std::invalid_argument);
    M.at(1, 1) = -0.1;
    EXPECT_THROW(nightforge::composite_raindrop(C, M, ImageBuffer(4, 4, 3)),
                 std::invalid_argument);
}

TEST(CompositeRain, IdentityWhenClearAir) {
    const ImageBuffer C = testutil::random_image(6, 9, 5, 3);
    const ImageBuffer T(9, 5, 1, 1.0);
    const ImageBuffer out = nightforge::composite_rain(C, {}, T, {0.8, 0.8, 0.8});
    EXPECT_EQ(out.data, C.data);
}

TEST(CompositeRain, MatchesFormulaWithStreaksAndAirlight) {
    const ImageBuffer C = testutil::random_image(7, 6, 6, 3);
    const ImageBuffer T = testutil::random_image(8, 6, 6, 1);
    const std::vector<ImageBuffer> streaks = {testutil::random_image(9, 6, 6, 1, 0.0, 0.3),
                                              testutil::random_image(10, 6, 6, 1, 0.0, 0.3)};
    const std::array<double, 3> A = {0.7, 0.75, 0.8};
    const ImageBuffer out = nightforge::composite_rain(C, streaks, T, A);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const double t = T.at(r, c);
                double x = C.at(r, c, ch) + streaks[0].at(r, c) + streaks[1].at(r, c);
                double v = t * x + (1.0 - t) * A[static_cast<std::size_t>(ch)];
                v = std::min(1.0, std::max(0.0, v));
                EXPECT_NEAR(out.at(r, c, ch), v, 1e-15);
            }
}

TEST(CompositeSnow, IdentityAndFormula) {
    const ImageBuffer C = testutil::random_image(11, 7, 7, 3);
    const ImageBuffer zero_mask(7, 7, 1, 0.0);
    const ImageBuffer S(7, 7, 1, 0.9);
    EXPECT_EQ(nightforge::composite_snow(C, zero_mask, S).data, C.data);

    const ImageBuffer M = testutil::random_image(12, 7, 7, 1);
    const ImageBuffer out = nightforge::composite_snow(C, M, S);
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 7; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const double m = M.at(r, c);
                const double v = (1.0 - m) * C.at(r, c, ch) + m * 0.9;
                EXPECT_NEAR(out.at(r, c, ch), std::min(1.0, std::max(0.0, v)), 1e-15);
            }
}

TEST(CompositeHaze, FullAndZeroTransmission) {
    const ImageBuffer C = testutil::random_image(13, 8, 8, 3);
    const std::array<double, 3> A = {0.7, 0.8, 0.9};
    const ImageBuffer out1 = nightforge::composite_haze(C, ImageBuffer(8, 8, 1, 1.0), A);
    EXPECT_EQ(out1.data, C.data);
    const ImageBuffer out0 = nightforge::composite_haze(C, ImageBuffer(8, 8, 1, 0.0), A);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
            for (int ch = 0; ch < 3; ++ch)
                EXPECT_EQ(out0.at(r, c, ch), A[static_cast<std::size_t>(ch)]);
}

TEST(GenTransmission, RangeFollowsBetaAndUniformityCollapses) {
    const double beta = 1.3;
    const ImageBuffer T = nightforge::gen_transmission(21, 20, 24, beta, 0.2);
    for (double v : T.data) {
        EXPECT_GE(v, std::exp(-beta) - 1e-12);
        EXPECT_LE(v, 1.0);
    }
    const ImageBuffer Tu = nightforge::gen_transmission(21, 10, 10, beta, 1.0);
    for (double v : Tu.data) EXPECT_EQ(v, std::exp(-beta * 0.5));
    EXPECT_EQ(nightforge::gen_transmission(21, 20, 24, beta, 0.2).data, T.data);
    EXPECT_THROW(nightforge::gen_transmission(21, 8, 8, 0.0, 0.2), std::invalid_argument);
    EXPECT_THROW(nightforge::gen_transmission(21, 8, 8, 1.0, 1.4), std::invalid_argument);
}

TEST(RainStreaks, LayerStructure) {
    const auto layers = nightforge::gen_rain_streaks(31, 48, 40, 3, 10.0, 20.0, 1.5, 0.25, 12);
    ASSERT_EQ(layers.size(), 3u);
    for (const auto& L : layers) {
        EXPECT_EQ(L.channels, 1);
        double hi = 0.0;
        for (double v : L.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 0.25 + 1e-12);
            hi = std::max(hi, v);
        }
        EXPECT_GT(hi, 0.0);
    }
}

TEST(RainStreaks, LeadingLayersStableWhenCountGrows) {
    const auto one = nightforge::gen_rain_streaks(32, 32, 32, 1, 0.0, 18.0, 1.2, 0.2, 8);
    const auto three = nightforge::gen_rain_streaks(32, 32, 32, 3, 0.0, 18.0, 1.2, 0.2, 8);
    EXPECT_EQ(one[0].data, three[0].data);
}

TEST(RainStreaks, IntensityScalesLinearly) {
    const auto lo = nightforge::gen_rain_streaks(33, 24, 24, 2, 5.0, 16.0, 1.0, 0.15, 6);
    const auto hi = nightforge::gen_rain_streaks(33, 24, 24, 2, 5.0, 16.0, 1.0, 0.30, 6);
    for (std::size_t l = 0; l < lo.size(); ++l)
        for (std::size_t i = 0; i < lo[l].data.size(); ++i)
            EXPECT_EQ(hi[l].data[i], 2.0 * lo[l].data[i]);
}

TEST(RainStreaks, RejectsDegenerateGeometry) {
    EXPECT_THROW(nightforge::gen_rain_streaks(1, 16, 16, 1, 0.0, 0.5, 1.0, 0.2),
                 std::invalid_argument);
    EXPECT_THROW(nightforge::gen_rain_streaks(1, 16, 16, 1, 0.0, 10.0, 0.5, 0.2),
                 std::invalid_argument);
    EXPECT_THROW(nightforge::gen_rain_streaks(1, 16, 16, 0, 0.0, 10.0, 1.0, 0.2),
                 std::invalid_argument);
}

TEST(ParticleField, SnowPayloadBrightnessRange) {
    const auto field = nightforge::gen_particle_field(41, 64, 64, 0.1, 1.5, 3.5,
                                                      DegradationKind::Snow);
    EXPECT_EQ(field.mask.channels, 1);
    EXPECT_EQ(field.payload.channels, 1);
    for (double v : field.mask.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    for (std::size_t i = 0; i < field.mask.data.size(); ++i)
        if (field.mask.data[i] > 0.0) {
            EXPECT_GE(field.payload.data[i], 0.8);
            EXPECT_LE(field.payload.data[i], 1.0);
        }
}

TEST(ParticleField, CoverageTracksDensity) {
    const double density = 0.1;
    long covered = 0;
    const int hw = 192;
    const auto field = nightforge::gen_particle_field(43, hw, hw, density, 2.0, 4.0,
                                                      DegradationKind::Snow);
    for (double v : field.mask.data)
        if (v >= 0.5) ++covered;
    const double frac = static_cast<double>(covered) / (hw * hw);
    EXPECT_GT(frac, 0.07);
    EXPECT_LT(frac, 0.13);
}

TEST(ParticleField, RaindropNeedsCleanAndRefractsIt) {
    EXPECT_THROW(
        nightforge::gen_particle_field(44, 32, 32, 0.1, 2.0, 5.0, DegradationKind::Raindrop),
        std::invalid_argument);
    const ImageBuffer clean = testutil::smooth_image(45, 32, 32, 3);
    const auto field = nightforge::gen_particle_field(44, 32, 32, 0.15, 2.0, 5.0,
                                                      DegradationKind::Raindrop, &clean);
    EXPECT_EQ(field.payload.channels, 3);
    for (double v : field.payload.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0 + 1e-12);
    }
}

TEST(ParticleField, DeterministicPerSeed) {
    const auto a = nightforge::gen_particle_field(46, 40, 40, 0.08, 1.5, 3.0,
                                                  DegradationKind::Snow);
    const auto b = nightforge::gen_particle_field(46, 40, 40, 0.08, 1.5, 3.0,
                                                  DegradationKind::Snow);
    EXPECT_EQ(a.mask.data, b.mask.data);
    EXPECT_EQ(a.payload.data, b.payload.data);
}

TEST(SampleWeatherParams, StaysInDocumentedRanges) {
    for (DegradationKind k : {DegradationKind::Raindrop, DegradationKind::Rain,
                              DegradationKind::Snow, DegradationKind::Fog, DegradationKind::Haze}) {
        nightforge::CounterRng rng(51);
        for (int i = 0; i < 50; ++i) {
            const auto p = nightforge::sample_weather_params(k, rng, 7);
            EXPECT_EQ(p.seed, 7u);
            EXPECT_GE(p.atmospheric_light[0], 0.7);
            EXPECT_LE(p.atmospheric_light[0], 0.9);
            switch (k) {
                case DegradationKind::Raindrop:
                case DegradationKind::Snow:
                    EXPECT_GE(p.density, 0.05);
                    EXPECT_LE(p.density, 0.12);
                    break;
                case DegradationKind::Rain:
                    EXPECT_GE(p.angle_deg, -20.0);
                    EXPECT_LE(p.angle_deg, 20.0);
                    EXPECT_GE(p.intensity, 0.15);
                    EXPECT_LE(p.intensity, 0.35);
                    EXPECT_GE(p.beta, 0.2);
                    EXPECT_LE(p.beta, 0.6);
                    break;
                case DegradationKind::Fog:
                    EXPECT_GE(p.beta, 0.8);
                    EXPECT_LE(p.beta, 2.0);
                    break;
                case DegradationKind::Haze:
                    EXPECT_GE(p.beta, 0.4);
                    EXPECT_LE(p.beta, 1.2);
                    EXPECT_GE(p.haze_uniformity, 0.85);
                    break;
            }
        }
    }
}

TEST(SynthesizeWeather, RecordReproducesImageExactly) {
    const ImageBuffer C = testutil::smooth_image(61, 40, 48, 3);
    for (DegradationKind k : {DegradationKind::Raindrop, DegradationKind::Rain,
                              DegradationKind::Snow, DegradationKind::Fog, DegradationKind::Haze}) {
        nightforge::CounterRng rng(62);
        const auto params = nightforge::sample_weather_params(k, rng, 963);
        const auto [img, rec] = nightforge::synthesize_weather(C, k, params);
        EXPECT_EQ(rec.kind, nightforge::kind_name(k));
        EXPECT_EQ(rec.field_seed, 963u);
        const auto rebuilt = nightforge::params_from_record(rec);
        const auto [img2, rec2] = nightforge::synthesize_weather(C, k, rebuilt);
        EXPECT_EQ(img.data, img2.data) << nightforge::kind_name(k);
    }
}

TEST(SynthesizeWeather, OutputStaysInUnitRange) {
    const ImageBuffer C = testutil::random_image(63, 32, 32, 3);
    for (DegradationKind k : {DegradationKind::Raindrop, DegradationKind::Rain,
                              DegradationKind::Snow, DegradationKind::Fog, DegradationKind::Haze}) {
        nightforge::CounterRng rng(64);
        const auto params = nightforge::sample_weather_params(k, rng, 11);
        const auto [img, rec] = nightforge::synthesize_weather(C, k, params);
        for (double v : img.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}
