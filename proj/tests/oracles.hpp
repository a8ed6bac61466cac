// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used by the unit and acceptance
// suites. These are deliberately plain per-pixel / per-element loops kept
// separate from the library code paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "triposer/geometry.hpp"
#include "triposer/skeleton.hpp"
#include "triposer/synthetic.hpp"
#include "triposer/tensor.hpp"
#include "triposer/triplane.hpp"

namespace oracle {

using namespace triposer;

// Scalar affine map, axis by axis.
inline double map_u(double a, double a_min, double a_max, int width) {
    return (a - a_min) / (a_max - a_min) * width;
}
inline double map_v(double b, double b_min, double b_max, int height) {
    return (b_max - b) / (b_max - b_min) * height;
}

inline Pixel project_point(const Vec3& p, PlaneId plane, const WorldBounds& bounds, int height,
                           int width) {
    double a = 0.0, b = 0.0;
    switch (plane) {
        case PlaneId::XY: a = p.x; b = p.y; break;
        case PlaneId::XZ: a = p.x; b = p.z; break;
        case PlaneId::YZ: a = p.y; b = p.z; break;
    }
    const int ai = plane == PlaneId::YZ ? 1 : 0;
    const int bi = plane == PlaneId::XY ? 1 : 2;
    Pixel px;
    px.u = map_u(a, bounds.min[ai], bounds.max[ai], width);
    px.v = map_v(b, bounds.min[bi], bounds.max[bi], height);
    return px;
}

// Full per-pixel rasterization: every pixel against every joint and bone,
// with the documented precedence (joints beat bones, lowest joint index,
// then lowest bone i+j, then lowest i).
inline void rasterize(const Skeleton& skel, PlaneId plane, const WorldBounds& bounds, int height,
                      int width, double joint_radius, double bone_halfwidth, Tensor& occupancy,
                      Tensor& index) {
    const int n = skel.joint_count();
    std::vector<Pixel> px;
    for (const Vec3& j : skel.joints) px.push_back(project_point(j, plane, bounds, height, width));
    occupancy = Tensor({height, width});
    index = Tensor({height, width});
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const double cx = c + 0.5, cy = r + 0.5;
            int joint_hit = -1;
            for (int ji = 0; ji < n && joint_hit < 0; ++ji) {
                const double du = cx - px[static_cast<size_t>(ji)].u;
                const double dv = cy - px[static_cast<size_t>(ji)].v;
                if (du * du + dv * dv <= joint_radius * joint_radius) joint_hit = ji;
            }
            if (joint_hit >= 0) {
                occupancy.at(r, c) = 1.0;
                index.at(r, c) = static_cast<double>(joint_hit) / (n - 1);
                continue;
            }
            int best_i = -1, best_j = -1;
            for (const auto& [bi, bj] : skel.bones) {
                const double d_sq = point_segment_dist_sq(
                    cx, cy, px[static_cast<size_t>(bi)].u, px[static_cast<size_t>(bi)].v,
                    px[static_cast<size_t>(bj)].u, px[static_cast<size_t>(bj)].v);
                if (d_sq <= bone_halfwidth * bone_halfwidth) {
                    if (best_i < 0 || bi + bj < best_i + best_j ||
                        (bi + bj == best_i + best_j && bi < best_i)) {
                        best_i = bi;
                        best_j = bj;
                    }
                }
            }
            if (best_i >= 0) {
                occupancy.at(r, c) = 1.0;
                index.at(r, c) = static_cast<double>(best_i + best_j) / (2.0 * (n - 1));
            }
        }
    }
}

// Scalar bilinear interpolation on one plane with clamp-to-edge, then summed
// over the three planes.
inline double bilinear(const Tensor& planes, int plane, int channel, double u, double v) {
    const int h = planes.size(2), w = planes.size(3);
    const double sx = u - 0.5, sy = v - 0.5;
    const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
    const double fx = sx - x0, fy = sy - y0;
    auto val = [&](int yy, int xx) {
        return planes.at(plane, channel, std::clamp(yy, 0, h - 1), std::clamp(xx, 0, w - 1));
    };
    return (1 - fx) * (1 - fy) * val(y0, x0) + fx * (1 - fy) * val(y0, x0 + 1) +
           (1 - fx) * fy * val(y0 + 1, x0) + fx * fy * val(y0 + 1, x0 + 1);
}

inline std::vector<double> query_triplane(const Triplane& t, const Vec3& p, bool geometry) {
    std::vector<double> out(static_cast<size_t>(t.channels()), 0.0);
    if (!t.bounds.contains(p)) return out;
    const Tensor& planes = geometry ? t.geometry : t.color;
    for (int pi = 0; pi < 3; ++pi) {
        const Pixel px = project_point(p, kPlaneOrder[static_cast<size_t>(pi)], t.bounds,
                                       t.height(), t.width());
        for (int c = 0; c < t.channels(); ++c)
            out[static_cast<size_t>(c)] += bilinear(planes, pi, c, px.u, px.v);
    }
    return out;
}

// Analytic capsule-body triplane, written as one monolithic per-pixel loop.
inline Triplane capsule_triplane(const CapsuleCharacter& character, const Skeleton& posed,
                                 int channels, int height, int width, const WorldBounds& bounds) {
    Triplane t = Triplane::zeros(channels, height, width, bounds);
    const int bones = character.bone_count();
    for (int pi = 0; pi < 3; ++pi) {
        int a_axis = 0, b_axis = 1;
        if (pi == 1) { a_axis = 0; b_axis = 2; }
        if (pi == 2) { a_axis = 1; b_axis = 2; }
        const double a_min = bounds.min[a_axis], a_max = bounds.max[a_axis];
        const double b_min = bounds.min[b_axis], b_max = bounds.max[b_axis];
        const double cell_a = (a_max - a_min) / width;
        const double cell_b = (b_max - b_min) / height;
        const double tau = 2.0 * 0.5 * (cell_a + cell_b);
        for (int r = 0; r < height; ++r) {
            for (int c = 0; c < width; ++c) {
                const double wa = a_min + (c + 0.5) * cell_a;
                const double wb = b_max - (r + 0.5) * cell_b;
                double best = 1e30, best_s = 0.0;
                int best_bone = -1;
                for (int b = 0; b < bones; ++b) {
                    const auto [i, j] = posed.bones[static_cast<size_t>(b)];
                    const Vec3& pa = posed.joints[static_cast<size_t>(i)];
                    const Vec3& pb = posed.joints[static_cast<size_t>(j)];
                    double s = 0.0;
                    const double d_sq = point_segment_dist_sq_param(
                        wa, wb, pa[a_axis], pa[b_axis], pb[a_axis], pb[b_axis], &s);
                    const double d =
                        std::sqrt(d_sq) - character.bone_radii[static_cast<size_t>(b)];
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
                    const double wave = k % 2 == 1 ? std::sin(freq * frac) : std::cos(freq * frac);
                    t.geometry.at(pi, k, r, c) = 0.5 * (1.0 + wave) * g0;
                }
                for (int k = 0; k < 3 && k < channels; ++k)
                    t.color.at(pi, k, r, c) =
                        character.bone_colors[static_cast<size_t>(best_bone)][static_cast<size_t>(k)];
            }
        }
    }
    return t;
}

// Hard-surface silhouette of the capsule set along an axis view, by dense
// marching of the exact 3D capsule distance.
inline Tensor capsule_silhouette(const CapsuleCharacter& character, const Skeleton& posed,
                                 const WorldBounds& bounds, int size, int view_axis,
                                 bool from_positive, int march_steps = 512) {
    Tensor mask({size, size});
    int ua = 0, va = 1;
    if (view_axis == 2) { ua = 0; va = 1; }
    if (view_axis == 1) { ua = 0; va = 2; }
    if (view_axis == 0) { ua = 1; va = 2; }
    const int wa = view_axis;
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            double u = bounds.min[ua] + (c + 0.5) / size * (bounds.max[ua] - bounds.min[ua]);
            if (!from_positive)
                u = bounds.max[ua] - (c + 0.5) / size * (bounds.max[ua] - bounds.min[ua]);
            const double v =
                bounds.max[va] - (r + 0.5) / size * (bounds.max[va] - bounds.min[va]);
            bool hit = false;
            for (int i = 0; i < march_steps && !hit; ++i) {
                const double t =
                    bounds.min[wa] + (i + 0.5) / march_steps * (bounds.max[wa] - bounds.min[wa]);
                double p[3];
                p[ua] = u;
                p[va] = v;
                p[wa] = t;
                const Vec3 point{p[0], p[1], p[2]};
                for (size_t b = 0; b < posed.bones.size() && !hit; ++b) {
                    const auto [i0, i1] = posed.bones[b];
                    const double d = point_segment_dist3(point, posed.joints[static_cast<size_t>(i0)],
                                                         posed.joints[static_cast<size_t>(i1)]) -
                                     character.bone_radii[b];
                    if (d <= 0.0) hit = true;
                }
            }
            mask.at(r, c) = hit ? 1.0 : 0.0;
        }
    }
    return mask;
}

inline double iou(const Tensor& a, const Tensor& b, double thresh_a, double thresh_b) {
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const bool pa = a[i] > thresh_a;
        const bool pb = b[i] > thresh_b;
        if (pa && pb) ++inter;
        if (pa || pb) ++uni;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace oracle
