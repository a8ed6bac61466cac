// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "triposer/geometry.hpp"
#include "triposer/tensor.hpp"

namespace triposer {

// Paired geometry/color feature maps on the XY, XZ, YZ planes. Values are
// immutable triplane features; queries are pure.
struct Triplane {
    Tensor geometry;  // {3, C, H, W}
    Tensor color;     // {3, C, H, W}
    WorldBounds bounds;

    int channels() const { return geometry.empty() ? 0 : geometry.size(1); }
    int height() const { return geometry.empty() ? 0 : geometry.size(2); }
    int width() const { return geometry.empty() ? 0 : geometry.size(3); }

    static Triplane zeros(int channels, int height, int width, const WorldBounds& bounds = {});
    void validate() const;
};

// File kind flags for the binary format.
enum class TriplaneKind : uint32_t { Avatar = 0, SkeletonEncoding = 1 };

// {3, C, H, W} <-> {3C, H, W}; flat channel k is plane k/C, channel k%C.
Tensor flatten(const Tensor& planes);
Tensor unflatten(const Tensor& flat, int channels);

// Sum-aggregated bilinear sample of one field at a 3D point. Outside the
// bounds cube the result is zero; at the grid border samples clamp to edge.
enum class TriplaneField { Geometry, Color };
std::vector<double> query(const Triplane& t, const Vec3& p, TriplaneField field);

// Denoiser latent layout: per plane [geometry C | color C], plane-major flat
// {6C, H, W}. unstack_latent is the exact inverse and restores metadata.
Tensor stack_latent(const Triplane& t);
Triplane unstack_latent(const Tensor& latent, int channels, const WorldBounds& bounds);

// Conditioning stack, per plane: [latent 2C | init geometry C | init color C |
// occupancy C | index C] -> {3, 6C, H, W}. `latent` is flat {6C, H, W};
// `encoding` is the expanded skeleton encoding {3, 2C, H, W}.
Tensor concat_condition(const Tensor& latent, const Triplane& init, const Tensor& encoding);

// Binary format: magic "TRPL", u32 version=1, u32 kind, u32 C, H, W,
// bounds as 6 float64, then geometry and color blocks as float32, each in
// (plane, channel, row, col) order. All fields little-endian.
void save_triplane(const Triplane& t, const std::string& path,
                   TriplaneKind kind = TriplaneKind::Avatar);
Triplane load_triplane(const std::string& path, TriplaneKind* kind_out = nullptr);

}  // namespace triposer
