// nightforge: synthesize night-scene degradations and restore them.
//
// Exit codes: 0 success, 1 usage error, 2 data error (missing/corrupt
// files, shape mismatches, divergent training).

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "nightforge/pipeline.hpp"

namespace {

int run_synth(const nightforge::SynthOptions& opt, const std::string& from_manifest, int jobs) {
    if (!from_manifest.empty()) {
        const auto m = nightforge::synth_from_manifest(from_manifest, opt.output_dir, jobs);
        std::printf("regenerated %zu images into %s\n", m.entries.size(), opt.output_dir.c_str());
        return 0;
    }
    const auto m = nightforge::synth_run(opt);
    std::printf("wrote %zu images and manifest.json into %s\n", m.entries.size(),
                opt.output_dir.c_str());
    return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir) {
    const nightforge::MetricReport r = nightforge::eval_run(pred_dir, gt_dir);
    std::fprintf(stderr, "%-32s %10s %10s\n", "image", "psnr", "ssim");
    for (const auto& e : r.per_image)
        std::fprintf(stderr, "%-32s %10.4f %10.6f\n", e.name.c_str(), e.psnr, e.ssim);
    std::fprintf(stderr, "%-32s %10.4f %10.6f\n", "mean", r.mean_psnr, r.mean_ssim);
    for (const auto& e : r.per_image)
        std::printf("image %s psnr %.6f ssim %.6f\n", e.name.c_str(), e.psnr, e.ssim);
    std::printf("mean psnr %.6f ssim %.6f\n", r.mean_psnr, r.mean_ssim);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"night-scene degradation synthesis and diffusion restoration"};
    app.require_subcommand(1);

    nightforge::SynthOptions sopt;
    std::string kind_str = "fog";
    std::string from_manifest;
    double beta_override = -1.0;
    auto* synth = app.add_subcommand("synth", "render degraded copies of clean images");
    synth->add_option("--input-dir", sopt.input_dir, "directory of clean .png images");
    synth->add_option("--output-dir", sopt.output_dir, "destination directory")->required();
    synth->add_option("--kind", kind_str, "raindrop|rain|snow|fog|haze");
    synth->add_option("--seed", sopt.seed, "master seed");
    synth->add_option("--count", sopt.count, "number of images to render");
    synth->add_option("--e-min", sopt.e_min, "exposure target lower bound");
    synth->add_option("--e-max", sopt.e_max, "exposure target upper bound");
    synth->add_option("--variation", sopt.variation, "darkness map spatial variation in [0,0.2]");
    synth->add_option("--beta", beta_override, "override medium attenuation strength");
    synth->add_option("--jobs", sopt.jobs, "worker threads");
    synth->add_option("--from-manifest", from_manifest, "regenerate from an existing manifest");

    nightforge::RestoreOptions ropt;
    std::string denoiser_spec;
    auto* restore = app.add_subcommand("restore", "run tiled diffusion restoration");
    restore->add_option("--input", ropt.input, "degraded .png file or directory")->required();
    restore->add_option("--output-dir", ropt.output_dir, "destination directory")->required();
    restore->add_option("--model", ropt.model_path, "trained denoiser weights");
    restore->add_option("--denoiser", denoiser_spec, "oracle:<clean_dir> harness denoiser");
    restore->add_option("--patch", ropt.patch, "tile edge length");
    restore->add_option("--step", ropt.step, "tile stride");
    restore->add_option("--steps", ropt.steps, "sampling steps");
    restore->add_option("--seed", ropt.seed, "latent seed");

    std::string pred_dir, gt_dir;
    auto* eval = app.add_subcommand("eval", "compare restored images against ground truth");
    eval->add_option("--pred-dir", pred_dir, "restored images")->required();
    eval->add_option("--gt-dir", gt_dir, "ground-truth images")->required();

    nightforge::TrainToyOptions topt;
    auto* train = app.add_subcommand("train-toy", "fit the small denoiser on a manifest");
    train->add_option("--manifest", topt.manifest_path, "synthesis manifest")->required();
    train->add_option("--out-model", topt.out_model, "weights output path")->required();
    train->add_option("--trace", topt.trace_path, "loss trace csv path");
    train->add_option("--steps", topt.steps, "gradient steps");
    train->add_option("--lr", topt.lr, "learning rate");
    train->add_option("--seed", topt.seed, "training seed");
    train->add_flag("--no-illumination", topt.no_illumination,
                    "zero out illumination guidance (ablation)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            if (from_manifest.empty()) {
                const auto kind = nightforge::parse_kind(kind_str);
                if (!kind) throw nightforge::UsageError("synth: unknown kind " + kind_str);
                sopt.kind = *kind;
                if (sopt.input_dir.empty())
                    throw nightforge::UsageError("synth: --input-dir is required");
                if (beta_override >= 0.0) sopt.beta_override = beta_override;
            }
            return run_synth(sopt, from_manifest, sopt.jobs);
        }
        if (restore->parsed()) {
            if (denoiser_spec.rfind("oracle:", 0) == 0)
                ropt.oracle_dir = denoiser_spec.substr(7);
            else if (!denoiser_spec.empty())
                throw nightforge::UsageError("restore: unknown denoiser spec " + denoiser_spec);
            nightforge::restore_run(ropt);
            return 0;
        }
        if (eval->parsed()) return run_eval(pred_dir, gt_dir);
        if (train->parsed()) {
            const nightforge::TrainResult r = nightforge::train_toy_run(topt);
            if (r.diverged) {
                std::fprintf(stderr, "train-toy: diverged after %zu steps\n", r.trace.size());
                return 2;
            }
            if (r.trace.empty())
                std::printf("no steps taken\n");
            else
                std::printf("final loss %.17g over %zu steps\n", r.trace.back(), r.trace.size());
            return 0;
        }
    } catch (const nightforge::UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
