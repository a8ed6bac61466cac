// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "triposer/rng.hpp"
#include "triposer/tensor.hpp"

namespace triposer {

struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    int64_t offset = 0;  // element offset into the flat parameter vector
};

// Named flat collection of parameter tensors plus matching gradients.
// Registration order defines the manifest, the initialization order and the
// checkpoint layout, so it must be a pure function of the model config.
class ParamStore {
public:
    int add(const std::string& name, std::vector<int> shape);

    Tensor& value(int id) { return values_[static_cast<size_t>(id)]; }
    const Tensor& value(int id) const { return values_[static_cast<size_t>(id)]; }
    Tensor& grad(int id) { return grads_[static_cast<size_t>(id)]; }

    int count() const { return static_cast<int>(values_.size()); }
    int64_t total_size() const { return total_; }
    const std::vector<ParamInfo>& manifest() const { return infos_; }

    void zero_grads();
    std::vector<double> gather_values() const;
    std::vector<double> gather_grads() const;
    void scatter_values(const std::vector<double>& flat);
    bool all_finite() const;

private:
    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
    std::vector<ParamInfo> infos_;
    int64_t total_ = 0;
};

// Per-forward activation cache. Each block owns one slot vector; forward
// pushes in call order, backward pops in reverse. Separate workspaces make
// concurrent forwards over shared parameters safe.
class Workspace {
public:
    void resize(int block_count) { slots_.resize(static_cast<size_t>(block_count)); }
    std::vector<Tensor>& slot(int block_id) { return slots_[static_cast<size_t>(block_id)]; }
    void clear() {
        for (auto& s : slots_) s.clear();
    }

private:
    std::vector<std::vector<Tensor>> slots_;
};

// 2D convolution, kernel 1 or 3, stride 1, zero padding (k-1)/2.
struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 1;
    int w_id = -1, b_id = -1, ws_id = -1;

    Conv2d() = default;
    Conv2d(ParamStore& store, int& block_counter, const std::string& name, int in_channels,
           int out_channels, int kernel);

    Tensor forward(const ParamStore& store, Workspace& ws, const Tensor& x) const;
    Tensor backward(ParamStore& store, Workspace& ws, const Tensor& dy) const;
};

struct GroupNorm {
    int ch = 0, groups = 0;
    double eps = 1e-5;
    int g_id = -1, b_id = -1, ws_id = -1;

    GroupNorm() = default;
    GroupNorm(ParamStore& store, int& block_counter, const std::string& name, int channels,
              int groups_in);

    Tensor forward(const ParamStore& store, Workspace& ws, const Tensor& x) const;
    Tensor backward(ParamStore& store, Workspace& ws, const Tensor& dy) const;
};

struct SiLU {
    int ws_id = -1;

    SiLU() = default;
    explicit SiLU(int& block_counter) : ws_id(block_counter++) {}

    Tensor forward(Workspace& ws, const Tensor& x) const;
    Tensor backward(Workspace& ws, const Tensor& dy) const;
};

// Dense layer over a token matrix {tokens, in} -> {tokens, out} (also used
// for plain vectors as {1, in}).
struct Linear {
    int in_dim = 0, out_dim = 0;
    int w_id = -1, b_id = -1, ws_id = -1;

    Linear() = default;
    Linear(ParamStore& store, int& block_counter, const std::string& name, int in, int out);

    Tensor forward(const ParamStore& store, Workspace& ws, const Tensor& x) const;
    Tensor backward(ParamStore& store, Workspace& ws, const Tensor& dy) const;
};

Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& dy);
Tensor upsample_nearest2(const Tensor& x);
Tensor upsample_nearest2_backward(const Tensor& dy);
// Repeated 2x average pooling down to a target square size.
Tensor avg_pool_to(const Tensor& x, int target);

// Sinusoidal embedding of the integer step followed by a two-layer MLP.
struct TimeEmbedding {
    int dim = 0;
    Linear l1, l2;
    SiLU act;

    TimeEmbedding() = default;
    TimeEmbedding(ParamStore& store, int& block_counter, const std::string& name, int dim_in);

    Tensor forward(const ParamStore& store, Workspace& ws, int t) const;
    void backward(ParamStore& store, Workspace& ws, const Tensor& d_emb) const;

    static Tensor sinusoidal(int t, int dim);
};

// GN -> SiLU -> conv3x3 -> +time bias -> GN -> SiLU -> conv3x3 -> +skip.
struct ResBlock {
    int in_ch = 0, out_ch = 0;
    GroupNorm n1, n2;
    SiLU a1, a2;
    Conv2d conv1, conv2, skip;  // skip is 1x1, only when in_ch != out_ch
    Linear time_proj;
    bool has_skip = false;
    int ws_id = -1;

    ResBlock() = default;
    ResBlock(ParamStore& store, int& block_counter, const std::string& name, int in_channels,
             int out_channels, int time_dim, int groups);

    Tensor forward(const ParamStore& store, Workspace& ws, const Tensor& x,
                   const Tensor& emb) const;
    // d_emb accumulates the time-embedding cotangent across blocks.
    Tensor backward(ParamStore& store, Workspace& ws, const Tensor& dy, Tensor& d_emb) const;
};

// Self-attention over spatial tokens, optionally followed by cross-attention
// against condition tokens; both residual. Token count for the condition is
// 3 * r * r (three planes concatenated along the token axis).
struct AttentionBlock {
    int ch = 0, heads = 0, cond_ch = 0;  // cond_ch == 0 -> self-attention only
    GroupNorm norm_self, norm_cross;
    Linear q_self, k_self, v_self, proj_self;
    Linear q_cross, k_cross, v_cross, proj_cross;
    int ws_id = -1;

    AttentionBlock() = default;
    AttentionBlock(ParamStore& store, int& block_counter, const std::string& name, int channels,
                   int heads_in, int cond_channels, int groups);

    // cond_tokens: {3*r*r, cond_ch}; ignored when cond_ch == 0.
    Tensor forward(const ParamStore& store, Workspace& ws, const Tensor& x,
                   const Tensor& cond_tokens) const;
    Tensor backward(ParamStore& store, Workspace& ws, const Tensor& dy) const;
};

// {ch, r, r} -> {r*r, ch} spatial tokens and back.
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, int r);

}  // namespace triposer
