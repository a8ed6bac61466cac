// SPDX-License-Identifier: Apache-2.0
#include "triposer/denoiser.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "triposer/errors.hpp"

namespace triposer {

using nlohmann::json;

const char* conditioning_mode_name(ConditioningMode mode) {
    switch (mode) {
        case ConditioningMode::Concat: return "concat";
        case ConditioningMode::CrossAttention: return "cross_attention";
        case ConditioningMode::Both: return "both";
    }
    return "?";
}

ConditioningMode conditioning_mode_from_name(const std::string& name) {
    if (name == "concat") return ConditioningMode::Concat;
    if (name == "cross_attention") return ConditioningMode::CrossAttention;
    if (name == "both") return ConditioningMode::Both;
    throw DataError("unknown conditioning mode: " + name);
}

int DenoiserConfig::stem_channels() const {
    return uses_concat() ? 18 * triplane_channels : 6 * triplane_channels;
}

bool DenoiserConfig::attends_at(int resolution) const {
    return std::find(attention_resolutions.begin(), attention_resolutions.end(), resolution) !=
           attention_resolutions.end();
}

void DenoiserConfig::validate() const {
    if (base_channels < 1 || triplane_channels < 1) throw DataError("invalid channel counts");
    if (channel_multipliers.empty()) throw DataError("need at least one resolution level");
    for (int m : channel_multipliers)
        if (m < 1) throw DataError("channel multipliers must be positive");
    if (attention_heads < 1) throw DataError("need at least one attention head");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw DataError("time embedding dim must be even and at least 2");
    if (norm_groups < 1) throw DataError("invalid norm group count");
    const int coarsest = input_resolution >> (levels() - 1);
    if (coarsest < 4 || coarsest << (levels() - 1) != input_resolution)
        throw DataError("input resolution must be divisible down to at least 4 px");

    std::vector<int> level_sizes;
    for (int l = 0; l < levels(); ++l) level_sizes.push_back(resolution_at(l));
    for (int r : attention_resolutions)
        if (std::find(level_sizes.begin(), level_sizes.end(), r) == level_sizes.end())
            throw DataError("attention resolution " + std::to_string(r) +
                            " is not produced by the downsampling path");

    auto check_width = [&](int w) {
        if (w % norm_groups != 0)
            throw DataError("norm groups must divide feature width " + std::to_string(w));
    };
    check_width(base_channels);
    for (int l = 0; l < levels(); ++l) {
        const int w = base_channels * channel_multipliers[static_cast<size_t>(l)];
        check_width(w);
        if (attends_at(resolution_at(l)) && w % attention_heads != 0)
            throw DataError("heads must divide attention width " + std::to_string(w));
        const int prev =
            l == 0 ? base_channels : base_channels * channel_multipliers[static_cast<size_t>(l - 1)];
        check_width(prev);
        const int above = l == levels() - 1
                              ? w
                              : base_channels * channel_multipliers[static_cast<size_t>(l + 1)];
        check_width(above + w);  // up-path concat width
    }
}

json DenoiserConfig::to_json() const {
    return json{{"base_channels", base_channels},
                {"channel_multipliers", channel_multipliers},
                {"attention_resolutions", attention_resolutions},
                {"attention_heads", attention_heads},
                {"conditioning_mode", conditioning_mode_name(conditioning_mode)},
                {"triplane_channels", triplane_channels},
                {"input_resolution", input_resolution},
                {"time_embed_dim", time_embed_dim},
                {"norm_groups", norm_groups}};
}

DenoiserConfig DenoiserConfig::from_json(const json& j) {
    DenoiserConfig c;
    c.base_channels = j.at("base_channels").get<int>();
    c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
    c.attention_resolutions = j.at("attention_resolutions").get<std::vector<int>>();
    c.attention_heads = j.at("attention_heads").get<int>();
    c.conditioning_mode = conditioning_mode_from_name(j.at("conditioning_mode").get<std::string>());
    c.triplane_channels = j.at("triplane_channels").get<int>();
    c.input_resolution = j.at("input_resolution").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.norm_groups = j.value("norm_groups", 8);
    return c;
}

Condition make_condition(const Tensor& init_geometry, const Tensor& init_color,
                         const Tensor& encoding_expanded) {
    if (init_geometry.dim() != 4 || !init_geometry.same_shape(init_color))
        throw DataError("condition: init tensors must be matching {3, C, H, W}");
    const int c = init_geometry.size(1), h = init_geometry.size(2), w = init_geometry.size(3);
    if (encoding_expanded.dim() != 4 || encoding_expanded.size(0) != 3 ||
        encoding_expanded.size(1) != 2 * c || encoding_expanded.size(2) != h ||
        encoding_expanded.size(3) != w)
        throw DataError("condition: encoding must be {3, 2C, H, W}");
    Condition cond;
    cond.planes = Tensor({3, 4 * c, h, w});
    const int64_t map_sz = static_cast<int64_t>(h) * w;
    for (int p = 0; p < 3; ++p) {
        double* dst = cond.planes.data() + static_cast<int64_t>(p) * 4 * c * map_sz;
        std::memcpy(dst, init_geometry.data() + static_cast<int64_t>(p) * c * map_sz,
                    sizeof(double) * c * map_sz);
        std::memcpy(dst + c * map_sz, init_color.data() + static_cast<int64_t>(p) * c * map_sz,
                    sizeof(double) * c * map_sz);
        std::memcpy(dst + 2 * c * map_sz,
                    encoding_expanded.data() + static_cast<int64_t>(p) * 2 * c * map_sz,
                    sizeof(double) * 2 * c * map_sz);
    }
    return cond;
}

Tensor condition_tokens(const Tensor& cond_planes, int r) {
    const int c4 = cond_planes.size(1), h = cond_planes.size(2), w = cond_planes.size(3);
    Tensor tokens({3 * r * r, c4});
    for (int p = 0; p < 3; ++p) {
        Tensor plane({c4, h, w});
        std::memcpy(plane.data(), cond_planes.data() + static_cast<int64_t>(p) * c4 * h * w,
                    sizeof(double) * c4 * h * w);
        const Tensor pooled = avg_pool_to(plane, r);
        for (int i = 0; i < r * r; ++i)
            for (int c = 0; c < c4; ++c)
                tokens.at(p * r * r + i, c) = pooled[static_cast<int64_t>(c) * r * r + i];
    }
    return tokens;
}

namespace {

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    Tensor out({a.size(0) + b.size(0), a.size(1), a.size(2)});
    std::memcpy(out.data(), a.data(), sizeof(double) * a.numel());
    std::memcpy(out.data() + a.numel(), b.data(), sizeof(double) * b.numel());
    return out;
}

void split_channels(const Tensor& d, int first_ch, Tensor& da, Tensor& db) {
    da = Tensor({first_ch, d.size(1), d.size(2)});
    db = Tensor({d.size(0) - first_ch, d.size(1), d.size(2)});
    std::memcpy(da.data(), d.data(), sizeof(double) * da.numel());
    std::memcpy(db.data(), d.data() + da.numel(), sizeof(double) * db.numel());
}

// Stem input for concat conditioning, per plane: [latent 2C | cond 4C].
// Matches the triplane concat_condition layout after plane flattening.
Tensor assemble_concat_input(const Tensor& latent, const Tensor& cond_planes, int c) {
    const int h = latent.size(1), w = latent.size(2);
    Tensor x({18 * c, h, w});
    const int64_t map_sz = static_cast<int64_t>(h) * w;
    for (int p = 0; p < 3; ++p) {
        double* dst = x.data() + static_cast<int64_t>(p) * 6 * c * map_sz;
        std::memcpy(dst, latent.data() + static_cast<int64_t>(p) * 2 * c * map_sz,
                    sizeof(double) * 2 * c * map_sz);
        std::memcpy(dst + 2 * c * map_sz,
                    cond_planes.data() + static_cast<int64_t>(p) * 4 * c * map_sz,
                    sizeof(double) * 4 * c * map_sz);
    }
    return x;
}

Tensor extract_latent_cotangent(const Tensor& d_input, int c) {
    const int h = d_input.size(1), w = d_input.size(2);
    Tensor d({6 * c, h, w});
    const int64_t map_sz = static_cast<int64_t>(h) * w;
    for (int p = 0; p < 3; ++p)
        std::memcpy(d.data() + static_cast<int64_t>(p) * 2 * c * map_sz,
                    d_input.data() + static_cast<int64_t>(p) * 6 * c * map_sz,
                    sizeof(double) * 2 * c * map_sz);
    return d;
}

}  // namespace

std::unique_ptr<DenoiserModel> build_denoiser(const DenoiserConfig& config, Rng& rng) {
    config.validate();
    auto model = std::make_unique<DenoiserModel>();
    model->config = config;
    ParamStore& store = model->params;
    int& blocks = model->block_count;
    const int base = config.base_channels;
    const int groups = config.norm_groups;
    const int tdim = config.time_embed_dim;
    const int cond_ch = config.uses_cross() ? config.cond_channels() : 0;

    model->time_embed = TimeEmbedding(store, blocks, "time", tdim);
    model->stem = Conv2d(store, blocks, "stem", config.stem_channels(), base, 3);

    int ch = base;
    for (int l = 0; l < config.levels(); ++l) {
        const int out = base * config.channel_multipliers[static_cast<size_t>(l)];
        const std::string name = "down" + std::to_string(l);
        DenoiserModel::DownLevel level;
        level.res = ResBlock(store, blocks, name + ".res", ch, out, tdim, groups);
        ch = out;
        if (config.attends_at(config.resolution_at(l)))
            level.attn = AttentionBlock(store, blocks, name + ".attn", ch,
                                        config.attention_heads, cond_ch, groups);
        model->down.push_back(std::move(level));
    }

    model->mid1 = ResBlock(store, blocks, "mid.res1", ch, ch, tdim, groups);
    if (config.attends_at(config.resolution_at(config.levels() - 1)))
        model->mid_attn =
            AttentionBlock(store, blocks, "mid.attn", ch, config.attention_heads, cond_ch, groups);
    model->mid2 = ResBlock(store, blocks, "mid.res2", ch, ch, tdim, groups);

    model->up.resize(static_cast<size_t>(config.levels()));
    for (int l = config.levels() - 1; l >= 0; --l) {
        const int out = base * config.channel_multipliers[static_cast<size_t>(l)];
        const std::string name = "up" + std::to_string(l);
        DenoiserModel::UpLevel level;
        level.res = ResBlock(store, blocks, name + ".res", ch + out, out, tdim, groups);
        ch = out;
        if (config.attends_at(config.resolution_at(l)))
            level.attn = AttentionBlock(store, blocks, name + ".attn", ch,
                                        config.attention_heads, cond_ch, groups);
        model->up[static_cast<size_t>(l)] = std::move(level);
    }

    model->out_norm = GroupNorm(store, blocks, "out.norm", ch, groups);
    model->out_act = SiLU(blocks);
    model->out_conv = Conv2d(store, blocks, "out.conv", ch, config.latent_channels(), 3);

    // Initialization in manifest order: fan-in-scaled normals for conv and
    // projection weights, ones for norm gains, zeros for biases.
    for (int id = 0; id < store.count(); ++id) {
        const ParamInfo& info = store.manifest()[static_cast<size_t>(id)];
        Tensor& v = store.value(id);
        if (info.shape.size() == 4) {
            const double std_dev =
                1.0 / std::sqrt(static_cast<double>(info.shape[1]) * info.shape[2] * info.shape[3]);
            for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.normal() * std_dev;
        } else if (info.shape.size() == 2) {
            const double std_dev = 1.0 / std::sqrt(static_cast<double>(info.shape[1]));
            for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.normal() * std_dev;
        } else if (info.name.size() >= 2 && info.name.substr(info.name.size() - 2) == ".g") {
            v.fill(1.0);
        } else {
            v.fill(0.0);
        }
    }
    // Zero final layer: the initial epsilon prediction is identically zero.
    store.value(model->out_conv.w_id).fill(0.0);
    store.value(model->out_conv.b_id).fill(0.0);
    return model;
}

Tensor denoiser_forward(const DenoiserModel& model, Workspace& ws, const Tensor& latent,
                        const Condition& cond, int t) {
    const DenoiserConfig& cfg = model.config;
    const int c = cfg.triplane_channels;
    if (latent.dim() != 3 || latent.size(0) != 6 * c || latent.size(1) != cfg.input_resolution ||
        latent.size(2) != cfg.input_resolution)
        throw DataError("denoiser latent must be {6C, H, W} at the configured resolution");
    if (cond.planes.dim() != 4 || cond.planes.size(1) != 4 * c)
        throw DataError("denoiser condition must be {3, 4C, H, W}");
    if (t < 1) throw DataError("diffusion step must be at least 1");
    const ParamStore& store = model.params;

    const Tensor emb = model.time_embed.forward(store, ws, t);
    Tensor x = cfg.uses_concat() ? assemble_concat_input(latent, cond.planes, c) : latent;
    x = model.stem.forward(store, ws, x);

    std::vector<Tensor> skips;
    for (int l = 0; l < cfg.levels(); ++l) {
        const auto& level = model.down[static_cast<size_t>(l)];
        x = level.res.forward(store, ws, x, emb);
        if (level.attn)
            x = level.attn->forward(store, ws, x,
                                    cfg.uses_cross()
                                        ? condition_tokens(cond.planes, cfg.resolution_at(l))
                                        : Tensor());
        skips.push_back(x);
        if (l + 1 < cfg.levels()) x = avg_pool2(x);
    }

    x = model.mid1.forward(store, ws, x, emb);
    if (model.mid_attn)
        x = model.mid_attn->forward(
            store, ws, x,
            cfg.uses_cross() ? condition_tokens(cond.planes, cfg.resolution_at(cfg.levels() - 1))
                             : Tensor());
    x = model.mid2.forward(store, ws, x, emb);

    for (int l = cfg.levels() - 1; l >= 0; --l) {
        const auto& level = model.up[static_cast<size_t>(l)];
        x = concat_channels(x, skips[static_cast<size_t>(l)]);
        x = level.res.forward(store, ws, x, emb);
        if (level.attn)
            x = level.attn->forward(store, ws, x,
                                    cfg.uses_cross()
                                        ? condition_tokens(cond.planes, cfg.resolution_at(l))
                                        : Tensor());
        if (l > 0) x = upsample_nearest2(x);
    }

    x = model.out_conv.forward(store, ws, model.out_act.forward(ws, model.out_norm.forward(store, ws, x)));
    if (!x.all_finite()) throw NumericError("denoiser forward produced non-finite values");
    return x;
}

Tensor denoiser_backward(DenoiserModel& model, Workspace& ws, const Tensor& d_out) {
    const DenoiserConfig& cfg = model.config;
    ParamStore& store = model.params;
    Tensor d_emb({1, cfg.time_embed_dim});

    Tensor d = model.out_conv.backward(store, ws, d_out);
    d = model.out_norm.backward(store, ws, model.out_act.backward(ws, d));

    std::vector<Tensor> d_skips(static_cast<size_t>(cfg.levels()));
    for (int l = 0; l < cfg.levels(); ++l) {
        const auto& level = model.up[static_cast<size_t>(l)];
        if (l > 0) d = upsample_nearest2_backward(d);
        if (level.attn) d = level.attn->backward(store, ws, d);
        d = level.res.backward(store, ws, d, d_emb);
        const int skip_ch =
            model.config.base_channels * cfg.channel_multipliers[static_cast<size_t>(l)];
        Tensor d_in;
        split_channels(d, d.size(0) - skip_ch, d_in, d_skips[static_cast<size_t>(l)]);
        d = std::move(d_in);
    }

    d = model.mid2.backward(store, ws, d, d_emb);
    if (model.mid_attn) d = model.mid_attn->backward(store, ws, d);
    d = model.mid1.backward(store, ws, d, d_emb);

    for (int l = cfg.levels() - 1; l >= 0; --l) {
        const auto& level = model.down[static_cast<size_t>(l)];
        if (l + 1 < cfg.levels()) d = avg_pool2_backward(d);
        d += d_skips[static_cast<size_t>(l)];
        if (level.attn) d = level.attn->backward(store, ws, d);
        d = level.res.backward(store, ws, d, d_emb);
    }

    d = model.stem.backward(store, ws, d);
    model.time_embed.backward(store, ws, d_emb);
    return cfg.uses_concat() ? extract_latent_cotangent(d, cfg.triplane_channels) : d;
}

double loss_and_gradients(DenoiserModel& model, const Batch& batch,
                          const std::vector<Tensor>* extra_d_out,
                          std::vector<Tensor>* predictions_out) {
    if (batch.items.empty()) throw DataError("empty training batch");
    model.params.zero_grads();
    Workspace ws = model.make_workspace();
    const int b = static_cast<int>(batch.items.size());
    double loss = 0.0;
    if (predictions_out) predictions_out->clear();
    for (int i = 0; i < b; ++i) {
        const auto& item = batch.items[static_cast<size_t>(i)];
        const Tensor pred = denoiser_forward(model, ws, item.latent, *item.cond, item.t);
        const double inv = 1.0 / (static_cast<double>(b) * static_cast<double>(pred.numel()));
        Tensor d_out(pred.shape());
        double item_loss = 0.0;
        for (int64_t j = 0; j < pred.numel(); ++j) {
            const double r = pred[j] - item.eps[j];
            item_loss += r * r;
            d_out[j] = 2.0 * r * inv;
        }
        if (!std::isfinite(item_loss))
            throw NumericError("non-finite loss at batch item " + std::to_string(i));
        loss += item_loss * inv;
        if (extra_d_out && !(*extra_d_out)[static_cast<size_t>(i)].empty())
            d_out += (*extra_d_out)[static_cast<size_t>(i)];
        if (predictions_out) predictions_out->push_back(pred);
        denoiser_backward(model, ws, d_out);
    }
    return loss;
}

namespace {
constexpr char kCkptMagic[4] = {'T', 'P', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const DenoiserModel& model, const std::string& path) {
    json manifest;
    manifest["config"] = model.config.to_json();
    json params = json::array();
    for (const ParamInfo& info : model.params.manifest())
        params.push_back({{"name", info.name}, {"shape", info.shape}, {"offset", info.offset}});
    manifest["params"] = params;
    const std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write(kCkptMagic, 4);
    const uint32_t version = kCkptVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const std::vector<double> flat = model.params.gather_values();
    std::vector<float> blob(flat.size());
    for (size_t i = 0; i < flat.size(); ++i) blob[i] = static_cast<float>(flat[i]);
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out) throw DataError("write failed: " + path);
}

std::unique_ptr<DenoiserModel> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw DataError("bad magic, not a checkpoint: " + path);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (!in || version != kCkptVersion) throw DataError("unsupported checkpoint version: " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    if (!in || len > (1ull << 30)) throw DataError("corrupt checkpoint manifest: " + path);
    std::string text(static_cast<size_t>(len), '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("truncated checkpoint manifest: " + path);

    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError("bad checkpoint manifest JSON: " + std::string(e.what()));
    }
    const DenoiserConfig config = DenoiserConfig::from_json(manifest.at("config"));
    Rng rng(0);
    auto model = build_denoiser(config, rng);

    // The manifest must match the structure implied by the config.
    const auto& params = manifest.at("params");
    const auto& built = model->params.manifest();
    if (params.size() != built.size())
        throw DataError("checkpoint manifest does not match config: parameter count");
    for (size_t i = 0; i < built.size(); ++i) {
        if (params[i].at("name").get<std::string>() != built[i].name ||
            params[i].at("shape").get<std::vector<int>>() != built[i].shape ||
            params[i].at("offset").get<int64_t>() != built[i].offset)
            throw DataError("checkpoint manifest does not match config: " + built[i].name);
    }

    std::vector<float> blob(static_cast<size_t>(model->params.total_size()));
    in.read(reinterpret_cast<char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!in) throw DataError("truncated checkpoint payload: " + path);
    in.peek();
    if (!in.eof()) throw DataError("trailing bytes in checkpoint: " + path);
    std::vector<double> flat(blob.size());
    for (size_t i = 0; i < blob.size(); ++i) flat[i] = blob[i];
    model->params.scatter_values(flat);
    if (!model->params.all_finite()) throw NumericError("checkpoint contains non-finite values");
    return model;
}

}  // namespace triposer
