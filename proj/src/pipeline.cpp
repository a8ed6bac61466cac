// SPDX-License-Identifier: Apache-2.0
#include "triposer/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "triposer/errors.hpp"
#include "triposer/renderer.hpp"

namespace triposer {

namespace fs = std::filesystem;
using nlohmann::json;

EncodingVariant encoding_variant_from_name(const std::string& name) {
    if (name == "index") return EncodingVariant::Index;
    if (name == "heatmap") return EncodingVariant::Heatmap;
    throw DataError("unknown encoding variant: " + name);
}

void TrainConfig::validate() const {
    if (dataset_dir.empty()) throw DataError("train config needs a dataset path");
    if (learning_rate <= 0.0) throw DataError("learning rate must be positive");
    if (warmup_iterations < 0 || warmup_iterations >= total_iterations)
        throw DataError("warmup must be shorter than the total iteration count");
    if (decay_step < 1 || decay_factor <= 0.0) throw DataError("invalid decay settings");
    if (batch_size < 1) throw DataError("batch size must be positive");
    if (holdout_poses < 0) throw DataError("holdout count must be non-negative");
    if (checkpoint_every < 1) throw DataError("checkpoint cadence must be positive");
    int prev = 0;
    for (const auto& [until, count] : reconstruction_schedule) {
        if (until <= prev)
            throw DataError("reconstruction schedule must be strictly increasing");
        if (count < 0) throw DataError("reconstruction count must be non-negative");
        prev = until;
    }
    if (schedule.steps < 1) throw DataError("diffusion schedule needs at least one step");
    denoiser.validate();
}

json TrainConfig::to_json() const {
    json sched_entries = json::array();
    for (const auto& [until, count] : reconstruction_schedule)
        sched_entries.push_back({until, count});
    return json{{"dataset", dataset_dir},
                {"out_dir", out_dir},
                {"seed", seed},
                {"learning_rate", learning_rate},
                {"warmup_iterations", warmup_iterations},
                {"decay_step", decay_step},
                {"decay_factor", decay_factor},
                {"total_iterations", total_iterations},
                {"batch_size", batch_size},
                {"holdout_poses", holdout_poses},
                {"checkpoint_every", checkpoint_every},
                {"reconstruction_schedule", sched_entries},
                {"reconstruction_weight", reconstruction_weight},
                {"reconstruction_render_size", reconstruction_render_size},
                {"reconstruction_render_samples", reconstruction_render_samples},
                {"schedule",
                 {{"steps", schedule.steps},
                  {"gamma_start", schedule.gamma_start},
                  {"gamma_end", schedule.gamma_end}}},
                {"denoiser", denoiser.to_json()},
                {"encoding", encoding == EncodingVariant::Index ? "index" : "heatmap"},
                {"heatmap_sigma_px", heatmap_sigma_px}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.dataset_dir = j.at("dataset").get<std::string>();
    c.out_dir = j.value("out_dir", std::string("run"));
    c.seed = j.value("seed", static_cast<uint64_t>(1));
    c.learning_rate = j.value("learning_rate", 1e-4);
    c.warmup_iterations = j.value("warmup_iterations", 500);
    c.decay_step = j.value("decay_step", 500000);
    c.decay_factor = j.value("decay_factor", 0.5);
    c.total_iterations = j.at("total_iterations").get<int>();
    c.batch_size = j.value("batch_size", 4);
    c.holdout_poses = j.value("holdout_poses", 0);
    c.checkpoint_every = j.value("checkpoint_every", 1000);
    if (j.contains("reconstruction_schedule"))
        for (const auto& e : j["reconstruction_schedule"])
            c.reconstruction_schedule.emplace_back(e[0].get<int>(), e[1].get<int>());
    c.reconstruction_weight = j.value("reconstruction_weight", 0.1);
    c.reconstruction_render_size = j.value("reconstruction_render_size", 24);
    c.reconstruction_render_samples = j.value("reconstruction_render_samples", 24);
    if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        c.schedule.steps = s.value("steps", 1000);
        c.schedule.gamma_start = s.value("gamma_start", 1e-4);
        c.schedule.gamma_end = s.value("gamma_end", 0.02);
    }
    c.denoiser = DenoiserConfig::from_json(j.at("denoiser"));
    c.encoding = encoding_variant_from_name(j.value("encoding", std::string("index")));
    c.heatmap_sigma_px = j.value("heatmap_sigma_px", 2.0);
    return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("bad config JSON: " + std::string(e.what()));
    }
    TrainConfig c = from_json(j);
    c.validate();
    return c;
}

double lr_at(int iteration, const TrainConfig& cfg) {
    if (iteration < 0) throw DataError("iteration must be non-negative");
    double lr = cfg.learning_rate;
    if (cfg.warmup_iterations > 0)
        lr *= std::min(1.0, static_cast<double>(iteration) / cfg.warmup_iterations);
    const int past = std::max(0, iteration - 1) / cfg.decay_step;
    for (int i = 0; i < past; ++i) lr *= cfg.decay_factor;
    return lr;
}

int reconstructions_at(int iteration, const TrainConfig& cfg) {
    if (iteration < 0) throw DataError("iteration must be non-negative");
    for (const auto& [until, count] : cfg.reconstruction_schedule)
        if (iteration < until) return count;
    return 0;
}

Condition build_condition(const Triplane& init, const Skeleton& target, EncodingVariant variant,
                          double heatmap_sigma_px) {
    const int c = init.channels(), h = init.height(), w = init.width();
    Tensor expanded;
    if (variant == EncodingVariant::Index) {
        expanded = expand_to_channels(encode_skeleton(target, init.bounds, h, w), c);
    } else {
        expanded =
            expand_to_channels(encode_skeleton_heatmap(target, init.bounds, h, w, heatmap_sigma_px), c);
    }
    return make_condition(init.geometry, init.color, expanded);
}

namespace {

struct LoadedSample {
    int character = 0;
    int pose = 0;
    Tensor target_latent;       // {6C, H, W}
    Condition cond;             // init + target-skeleton encoding
    const Triplane* target = nullptr;  // owned by the sample list below
};

struct LoadedDataset {
    DatasetManifest manifest;
    std::vector<Triplane> inits;           // per character
    std::vector<Triplane> targets;         // per train sample
    std::vector<LoadedSample> train;
};

LoadedDataset load_training_data(const TrainConfig& cfg) {
    LoadedDataset data;
    data.manifest = load_dataset_manifest(cfg.dataset_dir);
    const auto& params = data.manifest.params;
    if (params.channels != cfg.denoiser.triplane_channels ||
        params.height != cfg.denoiser.input_resolution ||
        params.width != cfg.denoiser.input_resolution)
        throw DataError("dataset shape does not match the denoiser config");

    data.inits.resize(static_cast<size_t>(params.n_chars));
    std::vector<bool> have(static_cast<size_t>(params.n_chars), false);
    const int train_poses = params.n_poses - cfg.holdout_poses;
    if (train_poses < 1) throw DataError("holdout leaves no training poses");

    for (const auto& ref : data.manifest.samples) {
        if (ref.pose >= train_poses) continue;
        if (!have[static_cast<size_t>(ref.character)]) {
            data.inits[static_cast<size_t>(ref.character)] =
                load_triplane(data.manifest.root + "/" + ref.init_path);
            have[static_cast<size_t>(ref.character)] = true;
        }
        data.targets.push_back(load_triplane(data.manifest.root + "/" + ref.target_path));
        LoadedSample s;
        s.character = ref.character;
        s.pose = ref.pose;
        const Triplane& init = data.inits[static_cast<size_t>(ref.character)];
        const Skeleton skel = load_skeleton_json(data.manifest.root + "/" + ref.skeleton_path);
        s.cond = build_condition(init, skel, cfg.encoding, cfg.heatmap_sigma_px);
        s.target_latent = stack_latent(data.targets.back());
        data.train.push_back(std::move(s));
    }
    for (size_t i = 0; i < data.train.size(); ++i)
        data.train[i].target = &data.targets[i];
    if (data.train.empty()) throw DataError("dataset manifest lists no training samples");
    return data;
}

// Full-precision training state for bitwise resume: parameters and Adam
// moments as float64 plus the master RNG stream.
constexpr char kStateMagic[4] = {'T', 'P', 'S', 'T'};

void save_train_state(const std::string& path, int next_iteration, const Rng& rng,
                      const ParamStore& params, const std::vector<double>& m,
                      const std::vector<double>& v) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write(kStateMagic, 4);
    const uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const std::string text =
        json{{"next_iteration", next_iteration}, {"rng", rng.save_state()}}.dump();
    const uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const std::vector<double> flat = params.gather_values();
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!out) throw DataError("write failed: " + path);
}

void load_train_state(const std::string& path, int& next_iteration, Rng& rng, ParamStore& params,
                      std::vector<double>& m, std::vector<double>& v) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kStateMagic, 4) != 0)
        throw DataError("bad magic, not a train state: " + path);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (!in || version != 1) throw DataError("unsupported train state version: " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    if (!in || len > (1ull << 20)) throw DataError("corrupt train state header: " + path);
    std::string text(static_cast<size_t>(len), '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError("bad train state manifest: " + std::string(e.what()));
    }
    next_iteration = j.at("next_iteration").get<int>();
    rng.load_state(j.at("rng").get<std::string>());
    const size_t n = static_cast<size_t>(params.total_size());
    std::vector<double> flat(n);
    m.resize(n);
    v.resize(n);
    in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(n * sizeof(double)));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(n * sizeof(double)));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw DataError("truncated train state: " + path);
    params.scatter_values(flat);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::string& resume_state) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    const LoadedDataset data = load_training_data(cfg);
    const NoiseSchedule sched = cfg.schedule.build();
    sched.validate();

    Rng init_rng(Rng::derive(cfg.seed, 1));
    auto model = build_denoiser(cfg.denoiser, init_rng);
    const size_t n_params = static_cast<size_t>(model->params.total_size());
    std::vector<double> adam_m(n_params, 0.0), adam_v(n_params, 0.0);
    Rng rng(Rng::derive(cfg.seed, 2));
    int start_iter = 0;
    if (!resume_state.empty())
        load_train_state(resume_state, start_iter, rng, model->params, adam_m, adam_v);

    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    const int n_train = static_cast<int>(data.train.size());
    const bool any_recons = !cfg.reconstruction_schedule.empty();

    // GT renders for the auxiliary loss, cached per (sample, view).
    std::map<std::pair<int, int>, Image> gt_render_cache;
    RenderConfig recon_cfg;
    recon_cfg.size = cfg.reconstruction_render_size;
    recon_cfg.samples_per_ray = cfg.reconstruction_render_samples;

    std::ofstream runlog(cfg.out_dir + "/runlog.jsonl",
                         start_iter == 0 ? std::ios::trunc : std::ios::app);
    if (!runlog) throw DataError("cannot write run log in " + cfg.out_dir);

    TrainResult result;
    const int c = cfg.denoiser.triplane_channels;
    const auto t_start = std::chrono::steady_clock::now();

    for (int iter = start_iter; iter < cfg.total_iterations; ++iter) {
        const auto iter_start = std::chrono::steady_clock::now();
        const double lr = lr_at(iter, cfg);
        const int recons = any_recons ? reconstructions_at(iter, cfg) : 0;

        // Draw every random choice for this iteration up front, in a fixed
        // order, so compute may be reorganized without touching the stream.
        Batch batch;
        std::vector<int> sample_idx(static_cast<size_t>(cfg.batch_size));
        for (int i = 0; i < cfg.batch_size; ++i) {
            sample_idx[static_cast<size_t>(i)] = rng.uniform_int(0, n_train - 1);
            const LoadedSample& s = data.train[static_cast<size_t>(sample_idx[static_cast<size_t>(i)])];
            Batch::Item item;
            item.t = rng.uniform_int(1, sched.steps());
            item.eps = Tensor(s.target_latent.shape());
            rng.fill_normal(item.eps);
            item.latent = forward_marginal(s.target_latent, item.t, sched, item.eps);
            item.cond = &s.cond;
            batch.items.push_back(std::move(item));
        }
        std::vector<std::pair<int, int>> recon_jobs;  // (batch item, view)
        for (int k = 0; k < recons; ++k)
            recon_jobs.emplace_back(rng.uniform_int(0, cfg.batch_size - 1), rng.uniform_int(0, 5));

        double aux_loss_total = 0.0;
        auto aux = [&](int item_index, const Tensor& pred, Tensor& d_out) -> double {
            double aux_loss = 0.0;
            const auto& item = batch.items[static_cast<size_t>(item_index)];
            const LoadedSample& s =
                data.train[static_cast<size_t>(sample_idx[static_cast<size_t>(item_index)])];
            const double abar = sched.alpha_bar_at(item.t);
            const double inv_sqrt_abar = 1.0 / std::sqrt(abar);
            const double noise_coef = std::sqrt(1.0 - abar);
            // predicted clean latent from the epsilon prediction
            Tensor pred_f0(item.latent.shape());
            for (int64_t j = 0; j < pred_f0.numel(); ++j)
                pred_f0[j] = (item.latent[j] - noise_coef * pred[j]) * inv_sqrt_abar;
            const Triplane pred_tri = unstack_latent(pred_f0, c, s.target->bounds);
            for (const auto& [job_item, view] : recon_jobs) {
                if (job_item != item_index) continue;
                RenderConfig view_cfg = recon_cfg;
                view_cfg.view = static_cast<ViewAxis>(view);
                auto key = std::make_pair(sample_idx[static_cast<size_t>(item_index)], view);
                auto it = gt_render_cache.find(key);
                if (it == gt_render_cache.end())
                    it = gt_render_cache.emplace(key, render(*s.target, view_cfg)).first;
                Tensor d_geo, d_col;
                const double mse_img = render_mse_grad(pred_tri, it->second, view_cfg, d_geo, d_col);
                aux_loss += cfg.reconstruction_weight * mse_img;
                // chain: d/d pred = d/d pred_f0 * (-noise_coef * inv_sqrt_abar)
                Triplane grad_tri;
                grad_tri.geometry = std::move(d_geo);
                grad_tri.color = std::move(d_col);
                grad_tri.bounds = s.target->bounds;
                const Tensor d_f0 = stack_latent(grad_tri);
                const double chain = -noise_coef * inv_sqrt_abar * cfg.reconstruction_weight;
                for (int64_t j = 0; j < d_out.numel(); ++j) d_out[j] += chain * d_f0[j];
            }
            aux_loss_total += aux_loss;
            return aux_loss;
        };

        // forward/backward with the aux hook folded into the cotangent
        model->params.zero_grads();
        Workspace ws = model->make_workspace();
        double loss = 0.0;
        for (int i = 0; i < cfg.batch_size; ++i) {
            const auto& item = batch.items[static_cast<size_t>(i)];
            const Tensor pred = denoiser_forward(*model, ws, item.latent, *item.cond, item.t);
            const double inv =
                1.0 / (static_cast<double>(cfg.batch_size) * static_cast<double>(pred.numel()));
            Tensor d_out(pred.shape());
            double item_loss = 0.0;
            for (int64_t j = 0; j < pred.numel(); ++j) {
                const double r = pred[j] - item.eps[j];
                item_loss += r * r;
                d_out[j] = 2.0 * r * inv;
            }
            if (!std::isfinite(item_loss))
                throw NumericError("non-finite loss at iteration " + std::to_string(iter) +
                                   ", batch item " + std::to_string(i));
            loss += item_loss * inv;
            if (recons > 0) loss += aux(i, pred, d_out);
            denoiser_backward(*model, ws, d_out);
        }

        // Adam step in fixed parameter order
        const std::vector<double> grads = model->params.gather_grads();
        std::vector<double> values = model->params.gather_values();
        const double t_step = static_cast<double>(iter + 1);
        const double bc1 = 1.0 - std::pow(beta1, t_step);
        const double bc2 = 1.0 - std::pow(beta2, t_step);
        for (size_t p = 0; p < n_params; ++p) {
            adam_m[p] = beta1 * adam_m[p] + (1.0 - beta1) * grads[p];
            adam_v[p] = beta2 * adam_v[p] + (1.0 - beta2) * grads[p] * grads[p];
            const double mhat = adam_m[p] / bc1;
            const double vhat = adam_v[p] / bc2;
            values[p] -= lr * mhat / (std::sqrt(vhat) + adam_eps);
        }
        model->params.scatter_values(values);

        RunLogEntry entry;
        entry.iteration = iter;
        entry.loss = loss;
        entry.lr = lr;
        entry.reconstructions = recons;
        entry.wall_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - iter_start)
                            .count();
        result.log.push_back(entry);
        runlog << json{{"iter", entry.iteration},
                       {"loss", entry.loss},
                       {"lr", entry.lr},
                       {"recons", entry.reconstructions},
                       {"wall_ms", entry.wall_ms}}
                      .dump()
               << "\n";

        if ((iter + 1) % cfg.checkpoint_every == 0 || iter + 1 == cfg.total_iterations) {
            save_checkpoint(*model, cfg.out_dir + "/ckpt_latest.tpck");
            save_train_state(cfg.out_dir + "/ckpt_latest.state", iter + 1, rng, model->params,
                             adam_m, adam_v);
        }
    }
    (void)t_start;

    result.checkpoint_path = cfg.out_dir + "/ckpt_latest.tpck";
    result.state_path = cfg.out_dir + "/ckpt_latest.state";
    save_checkpoint(*model, result.checkpoint_path);
    save_train_state(result.state_path, cfg.total_iterations, rng, model->params, adam_m, adam_v);
    return result;
}

Triplane repose(const DenoiserModel& model, const Triplane& init, const Skeleton& target,
                const NoiseSchedule& sched, uint64_t seed, EncodingVariant variant) {
    init.validate();
    const DenoiserConfig& cfg = model.config;
    if (init.channels() != cfg.triplane_channels || init.height() != cfg.input_resolution ||
        init.width() != cfg.input_resolution)
        throw DataError("init triplane does not match the model resolution/channels");
    const Condition cond = build_condition(init, target, variant, 2.0);
    Workspace ws = model.make_workspace();
    Rng rng(Rng::derive(seed, 0x5e505e));
    const Tensor latent = ancestral_sample(
        [&](const Tensor& x, int t) { return denoiser_forward(model, ws, x, cond, t); }, sched,
        rng, {cfg.latent_channels(), cfg.input_resolution, cfg.input_resolution});
    return unstack_latent(latent, cfg.triplane_channels, init.bounds);
}

std::vector<Triplane> animate(const DenoiserModel& model, const Triplane& init,
                              const MotionSequence& motion, const NoiseSchedule& sched,
                              uint64_t seed, bool chain, std::vector<double>* frame_ms,
                              EncodingVariant variant) {
    motion.validate();
    std::vector<Triplane> frames;
    frames.reserve(motion.frames.size());
    if (frame_ms) frame_ms->clear();
    const Triplane* current_init = &init;
    for (size_t k = 0; k < motion.frames.size(); ++k) {
        const auto start = std::chrono::steady_clock::now();
        frames.push_back(repose(model, *current_init, motion.frames[k], sched,
                                Rng::derive(seed, k), variant));
        if (frame_ms)
            frame_ms->push_back(std::chrono::duration<double, std::milli>(
                                    std::chrono::steady_clock::now() - start)
                                    .count());
        if (chain) current_init = &frames.back();
    }
    return frames;
}

}  // namespace triposer
