// SPDX-License-Identifier: Apache-2.0
#include "triposer/skeleton.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "triposer/errors.hpp"

namespace triposer {

using nlohmann::json;

void Skeleton::validate() const {
    const int n = joint_count();
    if (n < 2) throw DataError("skeleton must have at least 2 joints");
    for (const Vec3& p : joints)
        if (!p.finite()) throw DataError("skeleton has non-finite joint coordinates");
    std::set<std::pair<int, int>> seen;
    for (const auto& [i, j] : bones) {
        if (i < 0 || j < 0 || i >= n || j >= n) throw DataError("bone index out of range");
        if (i == j) throw DataError("degenerate bone (i, i)");
        if (i > j) throw DataError("bone indices must satisfy i < j");
        if (!seen.insert({i, j}).second) throw DataError("duplicate bone");
    }
}

void MotionSequence::validate() const {
    if (frames.empty()) throw DataError("motion sequence must have at least one frame");
    frames[0].validate();
    for (size_t k = 1; k < frames.size(); ++k) {
        frames[k].validate();
        if (frames[k].joint_count() != frames[0].joint_count() ||
            frames[k].bones != frames[0].bones)
            throw DataError("motion frames must share joint count and bone topology");
    }
}

std::vector<Pixel> project(const Skeleton& skeleton, PlaneId plane, const WorldBounds& bounds,
                           int height, int width) {
    bounds.require_valid();
    if (height < 2 || width < 2) throw DataError("grid resolution must be at least 2x2");
    std::vector<Pixel> out;
    out.reserve(skeleton.joints.size());
    for (const Vec3& p : skeleton.joints)
        out.push_back(project_to_plane(p, plane, bounds, height, width));
    return out;
}

void rasterize_encoding(const Skeleton& skeleton, PlaneId plane, const WorldBounds& bounds,
                        int height, int width, double joint_radius_px, double bone_halfwidth_px,
                        Tensor& occupancy_out, Tensor& index_out) {
    skeleton.validate();
    if (joint_radius_px < 0.5) throw DataError("joint radius must be at least 0.5 px");
    if (bone_halfwidth_px < 0.5) throw DataError("bone half-width must be at least 0.5 px");

    const std::vector<Pixel> px = project(skeleton, plane, bounds, height, width);
    const int n = skeleton.joint_count();
    const double denom = static_cast<double>(n - 1);
    const double jr_sq = joint_radius_px * joint_radius_px;
    const double bw_sq = bone_halfwidth_px * bone_halfwidth_px;

    occupancy_out = Tensor({height, width});
    index_out = Tensor({height, width});

    // Joints first (lowest index wins), discs of joint_radius_px. Primitives
    // touch only their bounding boxes; the per-pixel distance expression is
    // identical to the brute-force oracle so the grids agree exactly.
    Tensor joint_hit({height, width});
    for (int ji = 0; ji < n; ++ji) {
        const double cu = px[ji].u, cv = px[ji].v;
        const int r0 = std::max(0, static_cast<int>(std::floor(cv - joint_radius_px - 1.0)));
        const int r1 = std::min(height - 1, static_cast<int>(std::ceil(cv + joint_radius_px)));
        const int c0 = std::max(0, static_cast<int>(std::floor(cu - joint_radius_px - 1.0)));
        const int c1 = std::min(width - 1, static_cast<int>(std::ceil(cu + joint_radius_px)));
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                if (joint_hit.at(r, c) > 0.0) continue;  // earlier joint wins
                const double du = (c + 0.5) - cu;
                const double dv = (r + 0.5) - cv;
                if (du * du + dv * dv <= jr_sq) {
                    joint_hit.at(r, c) = 1.0;
                    occupancy_out.at(r, c) = 1.0;
                    index_out.at(r, c) = static_cast<double>(ji) / denom;
                }
            }
        }
    }

    // Bones in precedence order: smallest i+j, then smallest i.
    std::vector<std::pair<int, int>> bones = skeleton.bones;
    std::sort(bones.begin(), bones.end(), [](const auto& a, const auto& b) {
        const int sa = a.first + a.second, sb = b.first + b.second;
        return sa != sb ? sa < sb : a.first < b.first;
    });
    Tensor bone_hit({height, width});
    for (const auto& [bi, bj] : bones) {
        const double au = px[bi].u, av = px[bi].v;
        const double bu = px[bj].u, bv = px[bj].v;
        const int r0 = std::max(
            0, static_cast<int>(std::floor(std::min(av, bv) - bone_halfwidth_px - 1.0)));
        const int r1 = std::min(
            height - 1, static_cast<int>(std::ceil(std::max(av, bv) + bone_halfwidth_px)));
        const int c0 = std::max(
            0, static_cast<int>(std::floor(std::min(au, bu) - bone_halfwidth_px - 1.0)));
        const int c1 = std::min(
            width - 1, static_cast<int>(std::ceil(std::max(au, bu) + bone_halfwidth_px)));
        const double value = static_cast<double>(bi + bj) / (2.0 * denom);
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                if (joint_hit.at(r, c) > 0.0 || bone_hit.at(r, c) > 0.0) continue;
                const double d_sq =
                    point_segment_dist_sq(c + 0.5, r + 0.5, au, av, bu, bv);
                if (d_sq <= bw_sq) {
                    bone_hit.at(r, c) = 1.0;
                    occupancy_out.at(r, c) = 1.0;
                    index_out.at(r, c) = value;
                }
            }
        }
    }
}

SkeletonEncoding encode_skeleton(const Skeleton& skeleton, const WorldBounds& bounds, int height,
                                 int width, const RasterParams& params) {
    SkeletonEncoding enc;
    enc.height = height;
    enc.width = width;
    for (int p = 0; p < 3; ++p)
        rasterize_encoding(skeleton, kPlaneOrder[p], bounds, height, width,
                           params.joint_radius(height), params.bone_halfwidth(height),
                           enc.occupancy[p], enc.index[p]);
    return enc;
}

HeatmapEncoding encode_skeleton_heatmap(const Skeleton& skeleton, const WorldBounds& bounds,
                                        int height, int width, double sigma_px) {
    skeleton.validate();
    if (!(sigma_px > 0.0)) throw DataError("heatmap sigma must be positive");
    HeatmapEncoding enc;
    enc.height = height;
    enc.width = width;
    const double inv2s2 = 1.0 / (2.0 * sigma_px * sigma_px);
    for (int p = 0; p < 3; ++p) {
        const std::vector<Pixel> px = project(skeleton, kPlaneOrder[p], bounds, height, width);
        Tensor map({height, width});
        for (int r = 0; r < height; ++r) {
            for (int c = 0; c < width; ++c) {
                double best = 0.0;
                for (const Pixel& j : px) {
                    const double du = (c + 0.5) - j.u;
                    const double dv = (r + 0.5) - j.v;
                    best = std::max(best, std::exp(-(du * du + dv * dv) * inv2s2));
                }
                map.at(r, c) = best;
            }
        }
        enc.maps[p] = std::move(map);
    }
    return enc;
}

Tensor expand_to_channels(const SkeletonEncoding& enc, int channels) {
    if (channels < 1) throw DataError("channel count must be at least 1");
    const int h = enc.height, w = enc.width;
    Tensor out({3, 2 * channels, h, w});
    for (int p = 0; p < 3; ++p) {
        for (int c = 0; c < channels; ++c) {
            for (int r = 0; r < h; ++r)
                for (int col = 0; col < w; ++col) {
                    out.at(p, c, r, col) = enc.occupancy[p].at(r, col);
                    out.at(p, channels + c, r, col) = enc.index[p].at(r, col);
                }
        }
    }
    return out;
}

Tensor expand_to_channels(const HeatmapEncoding& enc, int channels) {
    if (channels < 1) throw DataError("channel count must be at least 1");
    const int h = enc.height, w = enc.width;
    Tensor out({3, 2 * channels, h, w});
    for (int p = 0; p < 3; ++p)
        for (int c = 0; c < 2 * channels; ++c)
            for (int r = 0; r < h; ++r)
                for (int col = 0; col < w; ++col) out.at(p, c, r, col) = enc.maps[p].at(r, col);
    return out;
}

namespace {

json skeleton_to_json(const Skeleton& skeleton) {
    json joints = json::array();
    for (const Vec3& p : skeleton.joints) joints.push_back({p.x, p.y, p.z});
    json bones = json::array();
    for (const auto& [i, j] : skeleton.bones) bones.push_back({i, j});
    return json{{"joints", joints}, {"bones", bones}};
}

std::vector<Vec3> parse_joints(const json& arr) {
    std::vector<Vec3> joints;
    for (const auto& entry : arr) {
        if (!entry.is_array() || entry.size() != 3) throw DataError("joint must be [x, y, z]");
        joints.push_back({entry[0].get<double>(), entry[1].get<double>(), entry[2].get<double>()});
    }
    return joints;
}

std::vector<std::pair<int, int>> parse_bones(const json& arr) {
    std::vector<std::pair<int, int>> bones;
    for (const auto& entry : arr) {
        if (!entry.is_array() || entry.size() != 2) throw DataError("bone must be [i, j]");
        bones.emplace_back(entry[0].get<int>(), entry[1].get<int>());
    }
    return bones;
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

}  // namespace

Skeleton load_skeleton_json(const std::string& path) {
    const json j = load_json_file(path);
    if (!j.contains("joints") || !j.contains("bones"))
        throw DataError("skeleton file missing joints/bones: " + path);
    Skeleton s;
    s.joints = parse_joints(j["joints"]);
    s.bones = parse_bones(j["bones"]);
    s.validate();
    return s;
}

void save_skeleton_json(const Skeleton& skeleton, const std::string& path) {
    skeleton.validate();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << skeleton_to_json(skeleton).dump(2) << "\n";
}

MotionSequence load_motion_json(const std::string& path) {
    const json j = load_json_file(path);
    if (!j.contains("bones") || !j.contains("frames"))
        throw DataError("motion file missing bones/frames: " + path);
    MotionSequence motion;
    const auto bones = parse_bones(j["bones"]);
    for (const auto& frame : j["frames"]) {
        Skeleton s;
        s.joints = parse_joints(frame);
        s.bones = bones;
        motion.frames.push_back(std::move(s));
    }
    motion.validate();
    return motion;
}

void save_motion_json(const MotionSequence& motion, const std::string& path) {
    motion.validate();
    json frames = json::array();
    for (const Skeleton& s : motion.frames) {
        json joints = json::array();
        for (const Vec3& p : s.joints) joints.push_back({p.x, p.y, p.z});
        frames.push_back(joints);
    }
    json bones = json::array();
    for (const auto& [i, j] : motion.frames[0].bones) bones.push_back({i, j});
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << json{{"bones", bones}, {"frames", frames}}.dump(2) << "\n";
}

}  // namespace triposer
