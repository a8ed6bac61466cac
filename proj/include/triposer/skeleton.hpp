// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "triposer/geometry.hpp"
#include "triposer/tensor.hpp"

namespace triposer {

// Pose signal: N joints plus a bone edge list. Immutable after validation.
struct Skeleton {
    std::vector<Vec3> joints;
    std::vector<std::pair<int, int>> bones;  // (i, j) with i < j

    int joint_count() const { return static_cast<int>(joints.size()); }

    // Enforces: N >= 2, indices in range, i < j, no duplicates, finite coords.
    void validate() const;
};

// Shared topology, per-frame joint positions.
struct MotionSequence {
    std::vector<Skeleton> frames;

    int frame_count() const { return static_cast<int>(frames.size()); }
    void validate() const;
};

struct RasterParams {
    double joint_radius_px = 0.0;    // 0 -> default max(1.0, H/64)
    double bone_halfwidth_px = 0.0;  // 0 -> default max(0.5, H/128)

    double joint_radius(int height) const {
        return joint_radius_px > 0.0 ? joint_radius_px
                                     : std::max(1.0, static_cast<double>(height) / 64.0);
    }
    double bone_halfwidth(int height) const {
        return bone_halfwidth_px > 0.0 ? bone_halfwidth_px
                                       : std::max(0.5, static_cast<double>(height) / 128.0);
    }
};

// One occupancy/index map pair per plane, ordered (XY, XZ, YZ).
struct SkeletonEncoding {
    std::array<Tensor, 3> occupancy;  // H x W of {0,1}
    std::array<Tensor, 3> index;      // H x W in [0,1], support inside occupancy
    int height = 0;
    int width = 0;
};

// Heatmap ablation variant: one real map per plane, no bone term.
struct HeatmapEncoding {
    std::array<Tensor, 3> maps;  // H x W in [0,1]
    int height = 0;
    int width = 0;
};

// Continuous pixel coordinates of every joint on one plane (unclamped).
std::vector<Pixel> project(const Skeleton& skeleton, PlaneId plane, const WorldBounds& bounds,
                           int height, int width);

// Occupancy + normalized-index rasterization for one plane. Precedence on
// overlap: joints beat bones; among joints the smallest index wins; among
// bones the smallest i+j, then smallest i.
void rasterize_encoding(const Skeleton& skeleton, PlaneId plane, const WorldBounds& bounds,
                        int height, int width, double joint_radius_px, double bone_halfwidth_px,
                        Tensor& occupancy_out, Tensor& index_out);

SkeletonEncoding encode_skeleton(const Skeleton& skeleton, const WorldBounds& bounds, int height,
                                 int width, const RasterParams& params = {});

// Max-aggregated per-joint Gaussians; bones are ignored (the variant's
// documented weakness).
HeatmapEncoding encode_skeleton_heatmap(const Skeleton& skeleton, const WorldBounds& bounds,
                                        int height, int width, double sigma_px);

// {3, 2C, H, W}: occupancy repeated C times, then index repeated C times.
Tensor expand_to_channels(const SkeletonEncoding& enc, int channels);

// Heatmap counterpart, same output shape so the two variants are drop-in
// interchangeable as conditioning: the single map fills all 2C channels.
Tensor expand_to_channels(const HeatmapEncoding& enc, int channels);

// JSON file formats:
//   skeleton: {"joints": [[x,y,z],...], "bones": [[i,j],...]}
//   motion:   {"bones": [...], "frames": [[[x,y,z],...], ...]}
Skeleton load_skeleton_json(const std::string& path);
void save_skeleton_json(const Skeleton& skeleton, const std::string& path);
MotionSequence load_motion_json(const std::string& path);
void save_motion_json(const MotionSequence& motion, const std::string& path);

}  // namespace triposer
