// SPDX-License-Identifier: Apache-2.0
#include "triposer/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "triposer/errors.hpp"

namespace triposer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Joint order: pelvis, chest, neck, head, L arm (shoulder/elbow/wrist),
// R arm, L leg (hip/knee/ankle), R leg. Arms along +-x, y up.
CapsuleCharacter humanoid_template() {
    CapsuleCharacter c;
    c.rest.joints = {
        {0.00, 0.00, 0.00},   // 0 pelvis
        {0.00, 0.30, 0.00},   // 1 chest
        {0.00, 0.50, 0.00},   // 2 neck
        {0.00, 0.70, 0.00},   // 3 head
        {0.14, 0.46, 0.00},   // 4 L shoulder
        {0.38, 0.46, 0.00},   // 5 L elbow
        {0.62, 0.46, 0.00},   // 6 L wrist
        {-0.14, 0.46, 0.00},  // 7 R shoulder
        {-0.38, 0.46, 0.00},  // 8 R elbow
        {-0.62, 0.46, 0.00},  // 9 R wrist
        {0.11, -0.06, 0.00},  // 10 L hip
        {0.11, -0.46, 0.00},  // 11 L knee
        {0.11, -0.86, 0.00},  // 12 L ankle
        {-0.11, -0.06, 0.00}, // 13 R hip
        {-0.11, -0.46, 0.00}, // 14 R knee
        {-0.11, -0.86, 0.00}, // 15 R ankle
    };
    c.rest.bones = {{0, 1},  {1, 2},  {2, 3},  {2, 4},   {4, 5},   {5, 6},   {2, 7},  {7, 8},
                    {8, 9},  {0, 10}, {10, 11}, {11, 12}, {0, 13},  {13, 14}, {14, 15}};
    return c;
}

CapsuleCharacter random_tree(Rng& rng, int n_joints) {
    CapsuleCharacter c;
    c.rest.joints.push_back({0.0, 0.0, 0.0});
    for (int k = 1; k < n_joints; ++k) {
        const int parent = rng.uniform_int(0, k - 1);
        // random direction via normalized gaussian triple
        Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
        const double n = dir.norm();
        dir = n > 1e-9 ? dir * (1.0 / n) : Vec3{0.0, 1.0, 0.0};
        const double len = rng.uniform(0.15, 0.35);
        Vec3 p = c.rest.joints[static_cast<size_t>(parent)] + dir * len;
        p.x = std::clamp(p.x, -0.9, 0.9);
        p.y = std::clamp(p.y, -0.9, 0.9);
        p.z = std::clamp(p.z, -0.9, 0.9);
        c.rest.joints.push_back(p);
        c.rest.bones.emplace_back(parent, k);
    }
    return c;
}

}  // namespace

CapsuleCharacter make_character(Rng& rng, int n_joints) {
    if (n_joints < 2) throw DataError("capsule character needs at least 2 joints");
    CapsuleCharacter c = n_joints == 16 ? humanoid_template() : random_tree(rng, n_joints);
    const int bones = c.bone_count();
    c.bone_radii.reserve(static_cast<size_t>(bones));
    c.bone_colors.reserve(static_cast<size_t>(bones));
    for (int b = 0; b < bones; ++b) c.bone_radii.push_back(rng.uniform(0.03, 0.08));
    for (int b = 0; b < bones; ++b) {
        // hue walk keeps colors distinct per bone
        const double hue = (static_cast<double>(b) + rng.uniform(0.1, 0.9)) / bones;
        const double h6 = hue * 6.0;
        const double f = h6 - std::floor(h6);
        const int sect = static_cast<int>(std::floor(h6)) % 6;
        const double v = 0.9, s = 0.8;
        const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
        switch (sect) {
            case 0: c.bone_colors.push_back({v, t, p}); break;
            case 1: c.bone_colors.push_back({q, v, p}); break;
            case 2: c.bone_colors.push_back({p, v, t}); break;
            case 3: c.bone_colors.push_back({p, q, v}); break;
            case 4: c.bone_colors.push_back({t, p, v}); break;
            default: c.bone_colors.push_back({v, p, q}); break;
        }
    }
    c.rest.validate();
    return c;
}

Skeleton pose_character(const CapsuleCharacter& character, const PoseParams& pose) {
    const Skeleton& rest = character.rest;
    if (pose.size() != rest.bones.size())
        throw DataError("pose parameter count must match bone count");
    for (const Vec3& r : pose)
        if (!r.finite()) throw DataError("pose parameters must be finite");

    Skeleton out = rest;
    std::vector<Mat3> chain(rest.joints.size(), Mat3::identity());
    // Bones are listed parents-first (parent index < child index), so a
    // single pass accumulates rotations down the tree.
    for (size_t b = 0; b < rest.bones.size(); ++b) {
        const auto [parent, child] = rest.bones[b];
        const Vec3& rot = pose[b];
        const double angle = rot.norm();
        const Mat3 local = Mat3::axis_angle(rot, angle);
        const Mat3 acc = chain[static_cast<size_t>(parent)] * local;
        chain[static_cast<size_t>(child)] = acc;
        const Vec3 offset = rest.joints[static_cast<size_t>(child)] -
                            rest.joints[static_cast<size_t>(parent)];
        out.joints[static_cast<size_t>(child)] =
            out.joints[static_cast<size_t>(parent)] + acc * offset;
    }
    return out;
}

Triplane ground_truth_triplane(const CapsuleCharacter& character, const Skeleton& posed,
                               int channels, int height, int width, const WorldBounds& bounds) {
    if (channels < 4) throw DataError("ground-truth triplane needs at least 4 channels");
    posed.validate();
    bounds.require_valid();
    const int bones = character.bone_count();
    Triplane t = Triplane::zeros(channels, height, width, bounds);

    for (int pi = 0; pi < 3; ++pi) {
        const PlaneId plane = kPlaneOrder[pi];
        const auto axes = plane_axes(plane);
        const double a_min = bounds.min[axes[0]], a_max = bounds.max[axes[0]];
        const double b_min = bounds.min[axes[1]], b_max = bounds.max[axes[1]];
        const double cell_a = (a_max - a_min) / width;
        const double cell_b = (b_max - b_min) / height;
        const double tau = 2.0 * 0.5 * (cell_a + cell_b);  // 2 px in world units

        for (int r = 0; r < height; ++r) {
            const double wb = b_max - (r + 0.5) * cell_b;
            for (int c = 0; c < width; ++c) {
                const double wa = a_min + (c + 0.5) * cell_a;
                double best = 1e30;
                int best_bone = -1;
                double best_s = 0.0;
                for (int b = 0; b < bones; ++b) {
                    const auto [i, j] = posed.bones[static_cast<size_t>(b)];
                    const Vec3& pa = posed.joints[static_cast<size_t>(i)];
                    const Vec3& pb = posed.joints[static_cast<size_t>(j)];
                    double s = 0.0;
                    const double d_sq = point_segment_dist_sq_param(
                        wa, wb, pa[axes[0]], pa[axes[1]], pb[axes[0]], pb[axes[1]], &s);
                    const double d = std::sqrt(d_sq) - character.bone_radii[static_cast<size_t>(b)];
                    if (d < best) {
                        best = d;
                        best_bone = b;
                        best_s = s;
                    }
                }
                const double g0 = std::clamp(1.0 - best / tau, 0.0, 1.0);
                if (g0 <= 0.0) continue;
                t.geometry.at(pi, 0, r, c) = g0;
                const double frac = (best_bone + best_s) / bones;
                for (int k = 1; k < channels; ++k) {
                    const double freq = 2.0 * M_PI * ((k + 1) / 2);
                    const double wave =
                        k % 2 == 1 ? std::sin(freq * frac) : std::cos(freq * frac);
                    t.geometry.at(pi, k, r, c) = 0.5 * (1.0 + wave) * g0;
                }
                const auto& rgb = character.bone_colors[static_cast<size_t>(best_bone)];
                for (int k = 0; k < 3 && k < channels; ++k) t.color.at(pi, k, r, c) = rgb[k];
            }
        }
    }
    return t;
}

json DatasetParams::to_json() const {
    return json{{"n_chars", n_chars},
                {"n_poses", n_poses},
                {"channels", channels},
                {"height", height},
                {"width", width},
                {"n_joints", n_joints},
                {"max_angle", max_angle},
                {"seed", seed},
                {"bounds_min", {bounds.min.x, bounds.min.y, bounds.min.z}},
                {"bounds_max", {bounds.max.x, bounds.max.y, bounds.max.z}}};
}

DatasetParams DatasetParams::from_json(const json& j) {
    DatasetParams p;
    p.n_chars = j.at("n_chars").get<int>();
    p.n_poses = j.at("n_poses").get<int>();
    p.channels = j.at("channels").get<int>();
    p.height = j.at("height").get<int>();
    p.width = j.at("width").get<int>();
    p.n_joints = j.value("n_joints", 16);
    p.max_angle = j.value("max_angle", 0.6);
    p.seed = j.at("seed").get<uint64_t>();
    const auto bmin = j.at("bounds_min");
    const auto bmax = j.at("bounds_max");
    p.bounds.min = {bmin[0].get<double>(), bmin[1].get<double>(), bmin[2].get<double>()};
    p.bounds.max = {bmax[0].get<double>(), bmax[1].get<double>(), bmax[2].get<double>()};
    return p;
}

std::vector<CapsuleCharacter> dataset_characters(const DatasetParams& params) {
    std::vector<CapsuleCharacter> chars;
    for (int ci = 0; ci < params.n_chars; ++ci) {
        Rng rng(Rng::derive(params.seed, 1000 + static_cast<uint64_t>(ci)));
        CapsuleCharacter c = make_character(rng, params.n_joints);
        c.id = ci;
        chars.push_back(std::move(c));
    }
    return chars;
}

namespace {

PoseParams random_pose(const CapsuleCharacter& character, Rng& rng, double max_angle) {
    PoseParams pose;
    pose.reserve(static_cast<size_t>(character.bone_count()));
    for (int b = 0; b < character.bone_count(); ++b) {
        Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
        const double n = axis.norm();
        axis = n > 1e-9 ? axis * (1.0 / n) : Vec3{0.0, 0.0, 1.0};
        const double angle = rng.uniform(-max_angle, max_angle);
        pose.push_back(axis * angle);
    }
    return pose;
}

}  // namespace

DatasetManifest make_dataset(const DatasetParams& params, const std::string& out_dir) {
    if (params.n_chars < 1 || params.n_poses < 1) throw DataError("dataset needs chars and poses");
    params.bounds.require_valid();
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.params = params;
    manifest.root = out_dir;

    const std::vector<CapsuleCharacter> chars = dataset_characters(params);
    for (int ci = 0; ci < params.n_chars; ++ci) {
        const CapsuleCharacter& character = chars[static_cast<size_t>(ci)];
        const std::string tag = "char" + std::to_string(ci);
        const Triplane init =
            ground_truth_triplane(character, character.rest, params.channels, params.height,
                                  params.width, params.bounds);
        save_triplane(init, out_dir + "/" + tag + "_init.trpl");
        save_skeleton_json(character.rest, out_dir + "/" + tag + "_rest_skel.json");

        for (int pj = 0; pj < params.n_poses; ++pj) {
            Rng pose_rng(Rng::derive(params.seed,
                                     2000000 + static_cast<uint64_t>(ci) * 10000 +
                                         static_cast<uint64_t>(pj)));
            const PoseParams pose = random_pose(character, pose_rng, params.max_angle);
            const Skeleton posed = pose_character(character, pose);
            const Triplane target = ground_truth_triplane(character, posed, params.channels,
                                                          params.height, params.width,
                                                          params.bounds);
            DatasetSampleRef ref;
            ref.character = ci;
            ref.pose = pj;
            ref.init_path = tag + "_init.trpl";
            ref.target_path = tag + "_pose" + std::to_string(pj) + ".trpl";
            ref.skeleton_path = tag + "_pose" + std::to_string(pj) + "_skel.json";
            save_triplane(target, out_dir + "/" + ref.target_path);
            save_skeleton_json(posed, out_dir + "/" + ref.skeleton_path);
            manifest.samples.push_back(std::move(ref));
        }
    }

    json j;
    j["params"] = params.to_json();
    json samples = json::array();
    for (const auto& s : manifest.samples)
        samples.push_back({{"character", s.character},
                           {"pose", s.pose},
                           {"init", s.init_path},
                           {"target", s.target_path},
                           {"skeleton", s.skeleton_path}});
    j["samples"] = samples;
    std::ofstream out(out_dir + "/manifest.json");
    if (!out) throw DataError("cannot write dataset manifest in " + out_dir);
    out << j.dump(2) << "\n";
    return manifest;
}

DatasetManifest load_dataset_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw DataError("cannot open dataset manifest in " + dir);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("bad dataset manifest: " + std::string(e.what()));
    }
    DatasetManifest manifest;
    manifest.params = DatasetParams::from_json(j.at("params"));
    manifest.root = dir;
    for (const auto& s : j.at("samples")) {
        DatasetSampleRef ref;
        ref.character = s.at("character").get<int>();
        ref.pose = s.at("pose").get<int>();
        ref.init_path = s.at("init").get<std::string>();
        ref.target_path = s.at("target").get<std::string>();
        ref.skeleton_path = s.at("skeleton").get<std::string>();
        manifest.samples.push_back(std::move(ref));
    }
    return manifest;
}

MotionStyle motion_style_from_name(const std::string& name) {
    if (name == "walk") return MotionStyle::Walk;
    if (name == "wave") return MotionStyle::Wave;
    if (name == "spin") return MotionStyle::Spin;
    throw DataError("unknown motion style: " + name);
}

std::vector<PoseParams> make_motion_params(const CapsuleCharacter& character, int frames,
                                           MotionStyle style, uint64_t seed) {
    if (frames < 1) throw DataError("motion needs at least one frame");
    const int bones = character.bone_count();
    const bool humanoid = character.rest.joint_count() == 16 && bones == 15;
    Rng rng(Rng::derive(seed, 77));

    // Per-bone phase/axis for the generic wiggle fallback.
    std::vector<Vec3> axes(static_cast<size_t>(bones));
    std::vector<double> phases(static_cast<size_t>(bones));
    for (int b = 0; b < bones; ++b) {
        Vec3 a{rng.normal(), rng.normal(), rng.normal()};
        const double n = a.norm();
        axes[static_cast<size_t>(b)] = n > 1e-9 ? a * (1.0 / n) : Vec3{0, 0, 1};
        phases[static_cast<size_t>(b)] = rng.uniform(0.0, 2.0 * M_PI);
    }

    const double period = 12.0;  // frames per cycle
    std::vector<PoseParams> out;
    out.reserve(static_cast<size_t>(frames));
    for (int k = 0; k < frames; ++k) {
        PoseParams pose(static_cast<size_t>(bones), Vec3{0, 0, 0});
        const double ph = 2.0 * M_PI * k / period;
        if (!humanoid) {
            // smooth wiggle, zero at frame 0 and C1 in k
            for (int b = 0; b < bones; ++b) {
                const double amp = 0.25;
                const double a = amp * (std::sin(ph + phases[static_cast<size_t>(b)]) -
                                        std::sin(phases[static_cast<size_t>(b)]));
                pose[static_cast<size_t>(b)] = axes[static_cast<size_t>(b)] * a;
            }
        } else {
            // Humanoid bone indices: 4/7 upper arms, 5/8 forearms,
            // 10/13 thighs, 11/14 shins, 0/9/12 attach to the pelvis.
            switch (style) {
                case MotionStyle::Walk: {
                    const double swing = 0.5 * std::sin(ph);
                    pose[10] = Vec3{1, 0, 0} * swing;
                    pose[13] = Vec3{1, 0, 0} * -swing;
                    pose[4] = Vec3{1, 0, 0} * (-0.4 * std::sin(ph));
                    pose[7] = Vec3{1, 0, 0} * (0.4 * std::sin(ph));
                    const double knee = 0.3 * (1.0 - std::cos(ph));
                    pose[11] = Vec3{1, 0, 0} * (0.5 * knee);
                    pose[14] = Vec3{1, 0, 0} * (0.5 * knee);
                    break;
                }
                case MotionStyle::Wave: {
                    // left upper arm raises, forearm waves
                    const double raise = 0.5 * (1.0 - std::cos(ph));
                    pose[4] = Vec3{0, 0, 1} * raise;
                    pose[5] = Vec3{0, 0, 1} * (0.6 * std::sin(ph));
                    break;
                }
                case MotionStyle::Spin: {
                    // whole body rotates about y via the pelvis-attached bones
                    const double angle = 2.0 * M_PI * k / std::max(1, frames);
                    pose[0] = Vec3{0, 1, 0} * angle;
                    pose[9] = Vec3{0, 1, 0} * angle;
                    pose[12] = Vec3{0, 1, 0} * angle;
                    break;
                }
            }
        }
        out.push_back(std::move(pose));
    }
    return out;
}

MotionSequence make_motion(const CapsuleCharacter& character, int frames, MotionStyle style,
                           uint64_t seed) {
    MotionSequence motion;
    for (const PoseParams& pose : make_motion_params(character, frames, style, seed))
        motion.frames.push_back(pose_character(character, pose));
    motion.validate();
    return motion;
}

}  // namespace triposer
