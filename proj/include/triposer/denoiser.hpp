// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "triposer/denoiser_blocks.hpp"
#include "triposer/rng.hpp"
#include "triposer/tensor.hpp"

namespace triposer {

enum class ConditioningMode { Concat, CrossAttention, Both };

const char* conditioning_mode_name(ConditioningMode mode);
ConditioningMode conditioning_mode_from_name(const std::string& name);

struct DenoiserConfig {
    int base_channels = 32;
    std::vector<int> channel_multipliers = {1, 2, 4};
    std::vector<int> attention_resolutions = {16, 8};
    int attention_heads = 4;
    ConditioningMode conditioning_mode = ConditioningMode::Both;
    int triplane_channels = 4;  // C
    int input_resolution = 32;  // H = W
    int time_embed_dim = 128;
    int norm_groups = 8;

    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    int latent_channels() const { return 6 * triplane_channels; }  // flat 3 x 2C
    int cond_channels() const { return 4 * triplane_channels; }    // per plane
    int stem_channels() const;  // 18C for concat/both, 6C for cross-attention
    int resolution_at(int level) const { return input_resolution >> level; }
    bool attends_at(int resolution) const;
    bool uses_concat() const { return conditioning_mode != ConditioningMode::CrossAttention; }
    bool uses_cross() const { return conditioning_mode != ConditioningMode::Concat; }

    void validate() const;
    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);
};

// Conditioning inputs shared by both pathways: per plane
// [init geometry C | init color C | occupancy C | index C] -> {3, 4C, H, W}.
struct Condition {
    Tensor planes;
};

Condition make_condition(const Tensor& init_geometry, const Tensor& init_color,
                         const Tensor& encoding_expanded);

// Cross-attention key/value tokens at resolution r: each plane average-pooled
// to r x r, one token per spatial site, planes concatenated along the token
// axis -> {3*r*r, 4C}.
Tensor condition_tokens(const Tensor& cond_planes, int r);

struct DenoiserModel {
    DenoiserConfig config;
    ParamStore params;
    int block_count = 0;

    TimeEmbedding time_embed;
    Conv2d stem;
    struct DownLevel {
        ResBlock res;
        std::optional<AttentionBlock> attn;
    };
    std::vector<DownLevel> down;
    ResBlock mid1, mid2;
    std::optional<AttentionBlock> mid_attn;
    struct UpLevel {
        ResBlock res;
        std::optional<AttentionBlock> attn;
    };
    std::vector<UpLevel> up;
    GroupNorm out_norm;
    SiLU out_act;
    Conv2d out_conv;

    Workspace make_workspace() const {
        Workspace ws;
        ws.resize(block_count);
        return ws;
    }
    int64_t parameter_count() const { return params.total_size(); }
};

// Deterministic construction + initialization: fan-in-scaled normal weights,
// zero biases, unit norm gains, zero final output layer.
std::unique_ptr<DenoiserModel> build_denoiser(const DenoiserConfig& config, Rng& rng);

// Epsilon prediction. latent {6C, H, W}; output has the same shape.
Tensor denoiser_forward(const DenoiserModel& model, Workspace& ws, const Tensor& latent,
                        const Condition& cond, int t);

// VJP against the last forward held in ws; accumulates parameter gradients
// and returns the latent cotangent.
Tensor denoiser_backward(DenoiserModel& model, Workspace& ws, const Tensor& d_out);

struct Batch {
    struct Item {
        Tensor latent;
        Tensor eps;
        const Condition* cond = nullptr;
        int t = 0;
    };
    std::vector<Item> items;
};

// Mean over batch and elements of (eps - prediction)^2, plus parameter
// gradients, accumulated in batch-index order. Extra per-item output
// cotangents (the auxiliary reconstruction loss) may be injected.
double loss_and_gradients(DenoiserModel& model, const Batch& batch,
                          const std::vector<Tensor>* extra_d_out = nullptr,
                          std::vector<Tensor>* predictions_out = nullptr);

// Checkpoint container: "TPCK", u32 version, u64 JSON manifest length,
// manifest (config + ordered parameter names/shapes/offsets), then all
// parameters as float32 little-endian in manifest order.
void save_checkpoint(const DenoiserModel& model, const std::string& path);
std::unique_ptr<DenoiserModel> load_checkpoint(const std::string& path);

}  // namespace triposer
