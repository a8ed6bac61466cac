// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "triposer/rng.hpp"
#include "triposer/tensor.hpp"
#include "triposer/triplane.hpp"

namespace triposer {

enum class ViewAxis { PosX, NegX, PosY, NegY, PosZ, NegZ, Custom };
ViewAxis view_axis_from_name(const std::string& name);

enum class DecoderMode { Analytic, Learned };

struct RenderConfig {
    int size = 64;
    ViewAxis view = ViewAxis::PosZ;
    double azimuth_deg = 0.0;    // used when view == Custom
    double elevation_deg = 0.0;  // used when view == Custom
    int samples_per_ray = 64;
    double density_scale = 25.0;
    double sharpness = 20.0;  // k in softplus(k * (g0 - 0.5))
    DecoderMode decoder = DecoderMode::Analytic;

    void validate() const;
};

struct Image {
    int height = 0, width = 0;
    Tensor rgb;    // {H, W, 3} in [0, 1]
    Tensor alpha;  // {H, W} in [0, 1]

    static Image zeros(int height, int width);
};

// Minimal learned decoder: 2-layer MLP on the concatenated geometry+color
// query vector -> (density, rgb). Stored beside the denoiser checkpoint.
struct LearnedDecoder {
    int in_dim = 0, hidden = 0;
    Tensor w1, b1, w2, b2;  // {hidden, in}, {hidden}, {4, hidden}, {4}

    static LearnedDecoder make(int triplane_channels, int hidden, Rng& rng);
    void save(const std::string& path) const;
    static LearnedDecoder load(const std::string& path);
};

struct DecodeResult {
    double density = 0.0;
    std::array<double, 3> rgb{0.0, 0.0, 0.0};
};

// Analytic mode: density = softplus(k * (g0 - 0.5)) with g0 = geometry
// channel 0 of query / 3 (undoing sum aggregation), rgb = color channels
// 0..2 of query / 3 clamped to [0, 1].
DecodeResult decode(const Triplane& t, const Vec3& p, const RenderConfig& cfg,
                    const LearnedDecoder* learned = nullptr);

// Orthographic emission-absorption rendering across the bounds cube.
Image render(const Triplane& t, const RenderConfig& cfg, const LearnedDecoder* learned = nullptr);

// Mean-squared image loss (rgb + alpha) between the render of `pred` and a
// target image, with gradients w.r.t. the predicted triplane values.
// Analytic decoder only. Returns the loss.
double render_mse_grad(const Triplane& pred, const Image& target, const RenderConfig& cfg,
                       Tensor& d_geometry, Tensor& d_color);

// Binary PPM (P6, 8-bit). Round-trips the quantized buffer exactly.
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

// K frames tiled horizontally.
Image contact_sheet(const std::vector<Image>& frames);

}  // namespace triposer
