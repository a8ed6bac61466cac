// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "triposer/denoiser.hpp"
#include "triposer/diffusion.hpp"
#include "triposer/skeleton.hpp"
#include "triposer/synthetic.hpp"
#include "triposer/triplane.hpp"

namespace triposer {

enum class EncodingVariant { Index, Heatmap };
EncodingVariant encoding_variant_from_name(const std::string& name);

struct ScheduleParams {
    int steps = 1000;
    double gamma_start = 1e-4;
    double gamma_end = 0.02;

    NoiseSchedule build() const { return make_linear_schedule(steps, gamma_start, gamma_end); }
};

struct TrainConfig {
    std::string dataset_dir;
    std::string out_dir = "run";
    uint64_t seed = 1;

    double learning_rate = 1e-4;
    int warmup_iterations = 500;
    int decay_step = 500000;
    double decay_factor = 0.5;
    int total_iterations = 1000;
    int batch_size = 4;
    int holdout_poses = 0;
    int checkpoint_every = 1000;

    // (until_iteration, reconstructions) pairs, strictly increasing.
    std::vector<std::pair<int, int>> reconstruction_schedule;
    double reconstruction_weight = 0.1;
    int reconstruction_render_size = 24;
    int reconstruction_render_samples = 24;

    ScheduleParams schedule;
    DenoiserConfig denoiser;
    EncodingVariant encoding = EncodingVariant::Index;
    double heatmap_sigma_px = 2.0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::string& path);
};

// Linear warmup to the base rate, then step decay at every decay boundary.
double lr_at(int iteration, const TrainConfig& cfg);

// Piecewise-constant lookup: count of the first entry with iteration <
// until_iteration, 0 once the schedule is exhausted (or empty).
int reconstructions_at(int iteration, const TrainConfig& cfg);

struct RunLogEntry {
    int iteration = 0;
    double loss = 0.0;
    double lr = 0.0;
    int reconstructions = 0;
    double wall_ms = 0.0;
};

struct TrainResult {
    std::vector<RunLogEntry> log;
    std::string checkpoint_path;   // final model checkpoint
    std::string state_path;        // full-precision resume state
};

// Adam training on the epsilon-prediction loss, plus the auxiliary rendered
// reconstruction loss whenever the schedule is active. Deterministic given
// (seed, config, dataset); resumable bitwise from the state file.
TrainResult train(const TrainConfig& cfg, const std::string& resume_state = "");

// Skeleton conditioning for one target pose, shared by train/repose.
Condition build_condition(const Triplane& init, const Skeleton& target, EncodingVariant variant,
                          double heatmap_sigma_px);

// One full diffusion process conditioned on (init triplane, target skeleton).
Triplane repose(const DenoiserModel& model, const Triplane& init, const Skeleton& target,
                const NoiseSchedule& sched, uint64_t seed,
                EncodingVariant variant = EncodingVariant::Index);

// Frame-by-frame generation; every frame is conditioned on the same init
// triplane with a per-frame derived seed. `chain` is experimental: condition
// each frame on the previous output instead.
std::vector<Triplane> animate(const DenoiserModel& model, const Triplane& init,
                              const MotionSequence& motion, const NoiseSchedule& sched,
                              uint64_t seed, bool chain = false,
                              std::vector<double>* frame_ms = nullptr,
                              EncodingVariant variant = EncodingVariant::Index);

}  // namespace triposer
