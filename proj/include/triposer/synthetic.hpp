// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "triposer/rng.hpp"
#include "triposer/skeleton.hpp"
#include "triposer/triplane.hpp"

namespace triposer {

// Procedural capsule body: fixed-radius capsules along the skeleton bones.
// Bones are oriented (parent, child) with parent < child, so the rest
// skeleton doubles as the kinematic tree.
struct CapsuleCharacter {
    Skeleton rest;  // T-pose
    std::vector<double> bone_radii;
    std::vector<std::array<double, 3>> bone_colors;
    int id = 0;

    int bone_count() const { return static_cast<int>(rest.bones.size()); }
};

// One rotation vector (axis * angle) per bone.
using PoseParams = std::vector<Vec3>;

// Humanoid template for n_joints == 16 (15 bones), random connected tree
// otherwise. Everything fits inside [-1, 1]^3.
CapsuleCharacter make_character(Rng& rng, int n_joints = 16);

// Forward kinematics over the bone tree: each bone rotates about its parent
// joint, rotations compose down the chain, the root stays fixed. Bone
// lengths are preserved exactly.
Skeleton pose_character(const CapsuleCharacter& character, const PoseParams& pose);

// Analytic triplane for a posed capsule body. Geometry channel 0 is a
// clamped linear ramp of the projected capsule distance (band tau = 2 px in
// world units); channels 1..C-1 are sin/cos encodings of the nearest bone's
// arclength fraction gated by channel 0. Color channels 0..2 carry the
// nearest bone color inside the support, the rest stay zero. C >= 4.
Triplane ground_truth_triplane(const CapsuleCharacter& character, const Skeleton& posed,
                               int channels, int height, int width, const WorldBounds& bounds);

struct DatasetParams {
    int n_chars = 4;
    int n_poses = 8;
    int channels = 4;
    int height = 32;
    int width = 32;
    int n_joints = 16;
    double max_angle = 0.6;  // per-bone rotation magnitude bound (radians)
    uint64_t seed = 0;
    WorldBounds bounds;

    nlohmann::json to_json() const;
    static DatasetParams from_json(const nlohmann::json& j);
};

struct DatasetSampleRef {
    int character = 0;
    int pose = 0;
    std::string init_path;      // T-pose triplane
    std::string target_path;    // posed triplane
    std::string skeleton_path;  // posed skeleton JSON
};

struct DatasetManifest {
    DatasetParams params;
    std::vector<DatasetSampleRef> samples;
    std::string root;
};

// Writes manifest.json, per-character rest skeleton + T-pose triplane, and
// per-(character, pose) target triplane + skeleton. Pure function of params.
DatasetManifest make_dataset(const DatasetParams& params, const std::string& out_dir);
DatasetManifest load_dataset_manifest(const std::string& dir);

// Re-generates the characters of a dataset (same derived seeds as
// make_dataset), e.g. for render-time capsule oracles.
std::vector<CapsuleCharacter> dataset_characters(const DatasetParams& params);

enum class MotionStyle { Walk, Wave, Spin };
MotionStyle motion_style_from_name(const std::string& name);

// Smooth periodic motion; frame 0 is the rest pose and trajectories are C1.
MotionSequence make_motion(const CapsuleCharacter& character, int frames, MotionStyle style,
                           uint64_t seed);
// The pose parameters behind each frame (exposed for dataset/test use).
std::vector<PoseParams> make_motion_params(const CapsuleCharacter& character, int frames,
                                           MotionStyle style, uint64_t seed);

}  // namespace triposer
