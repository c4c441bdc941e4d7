#pragma once
// pipeline.hpp
//
// End-to-end flows behind the CLI subcommands.  Degradation order is fixed:
// weather first, then darkening, so weather particles keep their daytime
// brightness before the exposure curve pulls the whole frame down.
//
// Every random quantity derives from one master seed through a fixed
// per-image schedule, so outputs are byte-identical across runs and across
// worker counts:
//   img_key        = derive_key(master_seed, image_index)
//   param stream   = derive_key(img_key, 1)   weather parameter sampling
//   field seed     = derive_key(img_key, 2)   weather mask/streak/depth fields
//   exposure draw  = derive_key(img_key, 3)   e ~ U[e_min, e_max]
//   darkness seed  = derive_key(img_key, 4)   adjustment map variation
//   restore latent = derive_key(seed, image_index)

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "nightforge/diffusion.hpp"
#include "nightforge/guided_net.hpp"
#include "nightforge/illumination.hpp"
#include "nightforge/lowlight.hpp"
#include "nightforge/manifest.hpp"
#include "nightforge/metrics.hpp"
#include "nightforge/png_io.hpp"
#include "nightforge/tiler.hpp"
#include "nightforge/weather.hpp"

namespace nightforge {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::vector<std::string> list_pngs(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

inline ImageBuffer to_rgb(const ImageBuffer& a) {
    if (a.channels == 3) return a;
    ImageBuffer out(a.height, a.width, 3);
    for (int r = 0; r < a.height; ++r)
        for (int c = 0; c < a.width; ++c)
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = a.at(r, c, 0);
    return out;
}

namespace detail {

// deterministic index-sharded parallel for; worker count never changes results
template <typename Fn>
inline void parallel_indexed(std::size_t n, int jobs, Fn&& fn) {
    jobs = std::max(1, jobs);
    if (jobs == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w)
        workers.emplace_back([&, w]() {
            try {
                for (std::size_t i = static_cast<std::size_t>(w); i < n;
                     i += static_cast<std::size_t>(jobs))
                    fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    for (auto& t : workers) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

struct SynthOptions {
    std::string input_dir;
    std::string output_dir;
    DegradationKind kind = DegradationKind::Fog;
    std::uint64_t seed = 0;
    int count = 5;
    double e_min = 0.05;
    double e_max = 0.3;
    double variation = 0.1;
    int jobs = 1;
    std::optional<double> beta_override;
};

inline ImageBuffer degrade_image(const ImageBuffer& clean, DegradationKind kind,
                                 const WeatherParams& wp, double e, double variation,
                                 std::uint64_t darkness_seed, WeatherRecord* rec_out) {
    auto [weathered, rec] = synthesize_weather(clean, kind, wp);
    ExposureConfig cfg;
    cfg.e = e;
    cfg.n = 10;
    cfg.variation_amplitude = variation;
    cfg.seed = darkness_seed;
    const AdjustmentMapStack stack = build_adjustment_stack(cfg, clean.height, clean.width);
    if (rec_out) *rec_out = std::move(rec);
    return darken(weathered, stack);
}

inline Manifest synth_run(const SynthOptions& opt) {
    namespace fs = std::filesystem;
    if (opt.count < 1) throw UsageError("synth: count must be >= 1");
    if (!(opt.e_min > 0.0 && opt.e_min <= opt.e_max && opt.e_max <= 0.5))
        throw UsageError("synth: exposure range must satisfy 0 < e_min <= e_max <= 0.5");
    const std::vector<std::string> inputs = list_pngs(opt.input_dir);
    if (inputs.empty()) throw DataError("synth: no .png files in " + opt.input_dir);
    fs::create_directories(opt.output_dir);

    Manifest manifest;
    manifest.master_seed = opt.seed;
    manifest.entries.resize(static_cast<std::size_t>(opt.count));
    std::vector<std::vector<std::uint8_t>> encoded(static_cast<std::size_t>(opt.count));

    detail::parallel_indexed(static_cast<std::size_t>(opt.count), opt.jobs, [&](std::size_t i) {
        const std::string& src = inputs[i % inputs.size()];
        const ImageBuffer clean = to_rgb(load_image(src));
        const std::uint64_t img_key = derive_key(opt.seed, i);
        CounterRng param_rng(derive_key(img_key, 1));
        WeatherParams wp = sample_weather_params(opt.kind, param_rng, derive_key(img_key, 2));
        if (opt.beta_override) wp.beta = *opt.beta_override;
        CounterRng exposure_rng(derive_key(img_key, 3));
        const double e = exposure_rng.uniform(opt.e_min, opt.e_max);
        const std::uint64_t dark_seed = derive_key(img_key, 4);

        ManifestEntry& entry = manifest.entries[i];
        const ImageBuffer degraded =
            degrade_image(clean, opt.kind, wp, e, opt.variation, dark_seed, &entry.weather);
        encoded[i] = encode_png(degraded);

        char name[64];
        std::snprintf(name, sizeof(name), "%04llu_%s.png", static_cast<unsigned long long>(i),
                      kind_name(opt.kind));
        entry.clean_path = src;
        entry.degraded_path = (fs::path(opt.output_dir) / name).string();
        entry.kind = kind_name(opt.kind);
        entry.exposure_e = e;
        entry.darkness_variation = opt.variation;
        entry.darkness_seed = dark_seed;
        entry.image_index = i;
    });

    for (std::size_t i = 0; i < encoded.size(); ++i) {
        std::ofstream f(manifest.entries[i].degraded_path, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("synth: cannot write " + manifest.entries[i].degraded_path);
        f.write(reinterpret_cast<const char*>(encoded[i].data()),
                static_cast<std::streamsize>(encoded[i].size()));
        if (!f) throw DataError("synth: short write " + manifest.entries[i].degraded_path);
    }
    save_manifest(manifest, (fs::path(opt.output_dir) / "manifest.json").string());
    return manifest;
}

// regenerates every degraded image from recorded parameters alone
inline Manifest synth_from_manifest(const std::string& manifest_path, const std::string& output_dir,
                                    int jobs) {
    namespace fs = std::filesystem;
    Manifest m = load_manifest(manifest_path);
    fs::create_directories(output_dir);
    std::vector<std::vector<std::uint8_t>> encoded(m.entries.size());
    detail::parallel_indexed(m.entries.size(), jobs, [&](std::size_t i) {
        ManifestEntry& e = m.entries[i];
        const auto kind = parse_kind(e.kind);
        const ImageBuffer clean = to_rgb(load_image(e.clean_path));
        const WeatherParams wp = params_from_record(e.weather);
        const ImageBuffer degraded = degrade_image(clean, *kind, wp, e.exposure_e,
                                                   e.darkness_variation, e.darkness_seed, nullptr);
        encoded[i] = encode_png(degraded);
        e.degraded_path = (fs::path(output_dir) / fs::path(e.degraded_path).filename()).string();
    });
    for (std::size_t i = 0; i < encoded.size(); ++i) {
        std::ofstream f(m.entries[i].degraded_path, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("synth: cannot write " + m.entries[i].degraded_path);
        f.write(reinterpret_cast<const char*>(encoded[i].data()),
                static_cast<std::streamsize>(encoded[i].size()));
    }
    save_manifest(m, (fs::path(output_dir) / "manifest.json").string());
    return m;
}

struct RestoreOptions {
    std::string input;      // png file or directory
    std::string output_dir;
    std::string model_path;  // empty when oracle_dir is used
    std::string oracle_dir;  // ground-truth directory for harness runs
    int patch = 64;
    int step = 16;
    int steps = 40;
    std::uint64_t seed = 0;
};

inline void restore_run(const RestoreOptions& opt) {
    namespace fs = std::filesystem;
    std::vector<std::string> inputs;
    if (fs::is_directory(opt.input))
        inputs = list_pngs(opt.input);
    else if (fs::exists(opt.input))
        inputs.push_back(opt.input);
    if (inputs.empty()) throw DataError("restore: no input images at " + opt.input);
    if (opt.model_path.empty() == opt.oracle_dir.empty())
        throw UsageError("restore: exactly one of --model or --denoiser oracle:<dir> is required");
    fs::create_directories(opt.output_dir);

    const NoiseSchedule sched = build_schedule();
    std::optional<TinyDenoiser> net;
    if (!opt.model_path.empty()) {
        try {
            net.emplace(load_model(opt.model_path));
        } catch (const std::exception& e) {
            throw DataError(e.what());
        }
    }

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        const ImageBuffer y = to_rgb(load_image(inputs[i]));
        if (opt.patch > y.height || opt.patch > y.width)
            throw DataError("restore: patch size " + std::to_string(opt.patch) +
                            " exceeds image " + inputs[i]);
        const ImageBuffer illu = estimate_illumination(y);
        const std::string name = fs::path(inputs[i]).filename().string();

        TileDenoiser den;
        ImageBuffer target(1, 1, 1);
        if (net) {
            den = [&net](const ImageBuffer& x, const ImageBuffer& deg, const ImageBuffer& il,
                         int t, int, int) { return denoise_predict(*net, x, deg, il, t); };
        } else {
            const std::string gt = (fs::path(opt.oracle_dir) / name).string();
            target = to_rgb(load_image(gt));
            if (target.height != y.height || target.width != y.width)
                throw DataError("restore: oracle target dims mismatch for " + name);
            den = [&target, &sched](const ImageBuffer& x, const ImageBuffer&, const ImageBuffer&,
                                    int t, int r0, int c0) {
                const ImageBuffer tc = crop(target, r0, c0, x.height, x.width);
                const double sa = sched.sqrt_ab[static_cast<std::size_t>(t)];
                const double sb = sched.sqrt_one_m_ab[static_cast<std::size_t>(t)];
                ImageBuffer eps(x.height, x.width, x.channels);
                for (std::size_t k = 0; k < eps.data.size(); ++k)
                    eps.data[k] = (x.data[k] - sa * tc.data[k]) / sb;
                return eps;
            };
        }

        CounterRng rng(derive_key(opt.seed, i));
        const ImageBuffer restored =
            tiled_restore(y, illu, den, sched, opt.steps, opt.patch, opt.step, rng);
        save_image(restored, (fs::path(opt.output_dir) / name).string());
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - start)
                            .count();
        std::fprintf(stderr, "restored %s in %lld ms\n", name.c_str(),
                     static_cast<long long>(ms));
    }
}

inline MetricReport eval_run(const std::string& pred_dir, const std::string& gt_dir) {
    namespace fs = std::filesystem;
    const std::vector<std::string> preds = list_pngs(pred_dir);
    const std::vector<std::string> gts = list_pngs(gt_dir);
    std::vector<std::string> pred_names, gt_names;
    for (const auto& p : preds) pred_names.push_back(fs::path(p).filename().string());
    for (const auto& g : gts) gt_names.push_back(fs::path(g).filename().string());
    std::vector<std::string> unmatched;
    for (const auto& n : pred_names)
        if (std::find(gt_names.begin(), gt_names.end(), n) == gt_names.end())
            unmatched.push_back(n + " (prediction only)");
    for (const auto& n : gt_names)
        if (std::find(pred_names.begin(), pred_names.end(), n) == pred_names.end())
            unmatched.push_back(n + " (ground truth only)");
    if (!unmatched.empty()) {
        std::ostringstream msg;
        msg << "eval: unmatched files:";
        for (const auto& u : unmatched) msg << "\n  " << u;
        throw DataError(msg.str());
    }
    if (pred_names.empty()) throw DataError("eval: no images to compare");

    MetricReport report;
    for (const auto& name : pred_names) {
        const ImageBuffer a = to_rgb(load_image((fs::path(pred_dir) / name).string()));
        const ImageBuffer b = to_rgb(load_image((fs::path(gt_dir) / name).string()));
        if (!a.same_shape(b)) throw DataError("eval: shape mismatch for " + name);
        report.per_image.push_back({name, psnr(a, b), ssim(a, b)});
    }
    report.finalize();
    return report;
}

struct TrainToyOptions {
    std::string manifest_path;
    std::string out_model;
    std::string trace_path;
    int steps = 500;
    double lr = 0.5;
    std::uint64_t seed = 0;
    bool no_illumination = false;
};

inline std::vector<TrainItem> manifest_to_train_items(const Manifest& m) {
    std::vector<TrainItem> items;
    for (const ManifestEntry& e : m.entries) {
        TrainItem it;
        it.clean = resize_area(to_rgb(load_image(e.clean_path)), 16, 16);
        it.degraded = resize_area(to_rgb(load_image(e.degraded_path)), 16, 16);
        it.illum = estimate_illumination(it.degraded);
        items.push_back(std::move(it));
    }
    return items;
}

inline TrainResult train_toy_run(const TrainToyOptions& opt) {
    const Manifest m = load_manifest(opt.manifest_path);
    validate_manifest(m);
    std::vector<TrainItem> items = manifest_to_train_items(m);
    if (items.size() < 64)
        throw DataError("train-toy: need at least 64 manifest entries, have " +
                        std::to_string(items.size()));
    const NoiseSchedule sched = build_schedule();
    TinyDenoiser net{NetConfig{}};
    init_params(net, derive_key(opt.seed, 0x1));
    const TrainResult res =
        train_toy(net, items, opt.steps, opt.lr, opt.seed, sched, !opt.no_illumination);
    if (!opt.trace_path.empty()) {
        std::ofstream f(opt.trace_path, std::ios::trunc);
        if (!f) throw DataError("train-toy: cannot write trace " + opt.trace_path);
        f << "step,loss\n";
        for (std::size_t i = 0; i < res.trace.size(); ++i) {
            char line[64];
            std::snprintf(line, sizeof(line), "%zu,%.17g\n", i, res.trace[i]);
            f << line;
        }
    }
    save_model(net, opt.out_model);
    return res;
}

}  // namespace nightforge
