// SPDX-License-Identifier: Apache-2.0
//
// triposer: triplane re-posing toolkit CLI.
// Exit codes: 0 success, 1 usage, 2 data/format error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "triposer/errors.hpp"
#include "triposer/pipeline.hpp"
#include "triposer/renderer.hpp"

namespace fs = std::filesystem;
using namespace triposer;

namespace {

struct ScheduleArgs {
    int steps = 1000;
    double gamma_start = 1e-4;
    double gamma_end = 0.02;
};

void add_schedule_flags(CLI::App* cmd, ScheduleArgs& args) {
    cmd->add_option("--steps", args.steps, "diffusion steps");
    cmd->add_option("--gamma-start", args.gamma_start, "schedule start");
    cmd->add_option("--gamma-end", args.gamma_end, "schedule end");
}

int run_encode_skeleton(const std::string& skeleton_path, const std::string& out,
                        int size, int channels, double extent) {
    const Skeleton skel = load_skeleton_json(skeleton_path);
    WorldBounds bounds;
    bounds.min = {-extent, -extent, -extent};
    bounds.max = {extent, extent, extent};
    const SkeletonEncoding enc = encode_skeleton(skel, bounds, size, size);
    const Tensor expanded = expand_to_channels(enc, channels);
    // encoding dump: occupancy block as geometry, index block as color
    Triplane dump = Triplane::zeros(channels, size, size, bounds);
    for (int p = 0; p < 3; ++p)
        for (int c = 0; c < channels; ++c)
            for (int r = 0; r < size; ++r)
                for (int q = 0; q < size; ++q) {
                    dump.geometry.at(p, c, r, q) = expanded.at(p, c, r, q);
                    dump.color.at(p, c, r, q) = expanded.at(p, channels + c, r, q);
                }
    save_triplane(dump, out, TriplaneKind::SkeletonEncoding);
    std::printf("wrote %s (%dx%d, %d channels per block)\n", out.c_str(), size, size, channels);
    return 0;
}

int run_render(const std::string& triplane_path, const std::string& out, const std::string& view,
               int size, int samples, double density_scale, double sharpness) {
    const Triplane t = load_triplane(triplane_path);
    RenderConfig cfg;
    cfg.view = view_axis_from_name(view);
    cfg.size = size;
    cfg.samples_per_ray = samples;
    cfg.density_scale = density_scale;
    cfg.sharpness = sharpness;
    const Image img = render(t, cfg);
    write_ppm(img, out);
    std::printf("wrote %s (%dx%d)\n", out.c_str(), size, size);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"triplane re-posing toolkit"};
    app.require_subcommand(1);

    // encode-skeleton
    auto* enc_cmd = app.add_subcommand("encode-skeleton",
                                       "rasterize a skeleton into triplane conditioning maps");
    std::string enc_in, enc_out = "enc.trpl";
    int enc_size = 64, enc_channels = 1;
    double enc_extent = 1.0;
    enc_cmd->add_option("skeleton", enc_in, "skeleton JSON file")->required();
    enc_cmd->add_option("--out", enc_out, "output triplane file");
    enc_cmd->add_option("--size", enc_size, "grid resolution");
    enc_cmd->add_option("--channels", enc_channels, "channel repetitions");
    enc_cmd->add_option("--extent", enc_extent, "half-size of the cubic bounds");

    // synth-dataset
    auto* synth_cmd = app.add_subcommand("synth-dataset", "generate a capsule-character dataset");
    DatasetParams ds;
    std::string synth_out;
    synth_cmd->add_option("--chars", ds.n_chars, "character count");
    synth_cmd->add_option("--poses", ds.n_poses, "poses per character");
    synth_cmd->add_option("--channels", ds.channels, "triplane channels");
    synth_cmd->add_option("--size", ds.height, "triplane resolution");
    synth_cmd->add_option("--joints", ds.n_joints, "joints per skeleton");
    synth_cmd->add_option("--seed", ds.seed, "generation seed");
    synth_cmd->add_option("--out", synth_out, "output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train the reposing denoiser");
    std::string train_config, resume_state;
    uint64_t train_seed = 0;
    bool seed_given = false;
    train_cmd->add_option("--config", train_config, "train config JSON")->required();
    train_cmd->add_option("--resume", resume_state, "resume from a .state file");
    train_cmd->add_option("--seed", train_seed, "seed override")
        ->each([&](const std::string&) { seed_given = true; });

    // repose
    auto* repose_cmd = app.add_subcommand("repose", "re-pose a triplane to a target skeleton");
    std::string rp_ckpt, rp_init, rp_skel, rp_out = "out.trpl", rp_encoding = "index";
    uint64_t rp_seed = 0;
    ScheduleArgs rp_sched;
    repose_cmd->add_option("--ckpt", rp_ckpt, "model checkpoint")->required();
    repose_cmd->add_option("--init", rp_init, "initial triplane")->required();
    repose_cmd->add_option("--skeleton", rp_skel, "target skeleton JSON")->required();
    repose_cmd->add_option("--seed", rp_seed, "sampling seed");
    repose_cmd->add_option("--out", rp_out, "output triplane");
    repose_cmd->add_option("--encoding", rp_encoding, "index|heatmap");
    add_schedule_flags(repose_cmd, rp_sched);

    // animate
    auto* anim_cmd = app.add_subcommand("animate", "generate a triplane sequence for a motion");
    std::string an_ckpt, an_init, an_motion, an_out = "frames", an_sheet, an_encoding = "index";
    uint64_t an_seed = 0;
    int an_frames = 0;
    bool an_chain = false;
    ScheduleArgs an_sched;
    anim_cmd->add_option("--ckpt", an_ckpt, "model checkpoint")->required();
    anim_cmd->add_option("--init", an_init, "initial triplane")->required();
    anim_cmd->add_option("--motion", an_motion, "motion JSON")->required();
    anim_cmd->add_option("--frames", an_frames, "frame count limit (0 = all)");
    anim_cmd->add_option("--seed", an_seed, "sampling seed");
    anim_cmd->add_option("--out", an_out, "output directory");
    anim_cmd->add_option("--sheet", an_sheet, "also render a contact-sheet PPM");
    anim_cmd->add_option("--encoding", an_encoding, "index|heatmap");
    anim_cmd->add_flag("--chain", an_chain, "condition each frame on the previous output");
    add_schedule_flags(anim_cmd, an_sched);

    // render
    auto* render_cmd = app.add_subcommand("render", "volumetric render of a triplane");
    std::string rd_tri, rd_out = "img.ppm", rd_view = "+z";
    int rd_size = 64, rd_samples = 64;
    double rd_density = 25.0, rd_sharp = 20.0;
    render_cmd->add_option("--triplane", rd_tri, "triplane file")->required();
    render_cmd->add_option("--view", rd_view, "+x/-x/+y/-y/+z/-z");
    render_cmd->add_option("--out", rd_out, "output PPM");
    render_cmd->add_option("--size", rd_size, "image size");
    render_cmd->add_option("--samples", rd_samples, "samples per ray");
    render_cmd->add_option("--density-scale", rd_density, "density multiplier");
    render_cmd->add_option("--sharpness", rd_sharp, "decoder sharpness k");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (enc_cmd->parsed())
            return run_encode_skeleton(enc_in, enc_out, enc_size, enc_channels, enc_extent);

        if (synth_cmd->parsed()) {
            ds.width = ds.height;
            const DatasetManifest manifest = make_dataset(ds, synth_out);
            std::printf("wrote %zu samples to %s\n", manifest.samples.size(), synth_out.c_str());
            return 0;
        }

        if (train_cmd->parsed()) {
            TrainConfig cfg = TrainConfig::load(train_config);
            if (seed_given) cfg.seed = train_seed;
            const TrainResult result = train(cfg, resume_state);
            std::printf("trained %d iterations, final loss %.6f\ncheckpoint: %s\n",
                        cfg.total_iterations,
                        result.log.empty() ? 0.0 : result.log.back().loss,
                        result.checkpoint_path.c_str());
            return 0;
        }

        if (repose_cmd->parsed()) {
            auto model = load_checkpoint(rp_ckpt);
            const Triplane init = load_triplane(rp_init);
            const Skeleton target = load_skeleton_json(rp_skel);
            const NoiseSchedule sched =
                make_linear_schedule(rp_sched.steps, rp_sched.gamma_start, rp_sched.gamma_end);
            const Triplane out = repose(*model, init, target, sched, rp_seed,
                                        encoding_variant_from_name(rp_encoding));
            save_triplane(out, rp_out);
            std::printf("wrote %s\n", rp_out.c_str());
            return 0;
        }

        if (anim_cmd->parsed()) {
            auto model = load_checkpoint(an_ckpt);
            const Triplane init = load_triplane(an_init);
            MotionSequence motion = load_motion_json(an_motion);
            if (an_frames > 0 && an_frames < motion.frame_count())
                motion.frames.resize(static_cast<size_t>(an_frames));
            const NoiseSchedule sched =
                make_linear_schedule(an_sched.steps, an_sched.gamma_start, an_sched.gamma_end);
            fs::create_directories(an_out);
            const std::vector<Triplane> frames =
                animate(*model, init, motion, sched, an_seed, an_chain, nullptr,
                        encoding_variant_from_name(an_encoding));
            std::vector<Image> rendered;
            for (size_t k = 0; k < frames.size(); ++k) {
                char name[64];
                std::snprintf(name, sizeof(name), "/frame_%03zu.trpl", k);
                save_triplane(frames[k], an_out + name);
                if (!an_sheet.empty()) rendered.push_back(render(frames[k], RenderConfig{}));
            }
            if (!an_sheet.empty()) write_ppm(contact_sheet(rendered), an_sheet);
            std::printf("wrote %zu frames to %s\n", frames.size(), an_out.c_str());
            return 0;
        }

        if (render_cmd->parsed())
            return run_render(rd_tri, rd_out, rd_view, rd_size, rd_samples, rd_density, rd_sharp);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
