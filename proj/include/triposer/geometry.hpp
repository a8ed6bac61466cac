// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>

#include "triposer/errors.hpp"

namespace triposer {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

struct Mat3 {
    // Row-major.
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return Mat3{}; }

    // Rodrigues rotation about a (possibly unnormalized) axis.
    static Mat3 axis_angle(Vec3 axis, double angle) {
        const double n = axis.norm();
        if (n < 1e-15) return identity();
        axis = axis * (1.0 / n);
        const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
        Mat3 r;
        r.m = {t * axis.x * axis.x + c,          t * axis.x * axis.y - s * axis.z, t * axis.x * axis.z + s * axis.y,
               t * axis.x * axis.y + s * axis.z, t * axis.y * axis.y + c,          t * axis.y * axis.z - s * axis.x,
               t * axis.x * axis.z - s * axis.y, t * axis.y * axis.z + s * axis.x, t * axis.z * axis.z + c};
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += m[3 * i + k] * o.m[3 * k + j];
                r.m[3 * i + j] = s;
            }
        return r;
    }
};

// Axis-aligned cube that fixes the projection domain for a whole sequence.
struct WorldBounds {
    Vec3 min{-1.0, -1.0, -1.0};
    Vec3 max{1.0, 1.0, 1.0};

    bool valid() const {
        return min.finite() && max.finite() && max.x > min.x && max.y > min.y && max.z > min.z;
    }
    void require_valid() const {
        if (!valid()) throw DataError("invalid world bounds (max must exceed min componentwise)");
    }
    bool contains(const Vec3& p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
               p.z <= max.z;
    }
};

enum class PlaneId { XY = 0, XZ = 1, YZ = 2 };

inline constexpr std::array<PlaneId, 3> kPlaneOrder{PlaneId::XY, PlaneId::XZ, PlaneId::YZ};

// Axis indices (first kept -> column u, second kept -> row v).
inline std::array<int, 2> plane_axes(PlaneId plane) {
    switch (plane) {
        case PlaneId::XY: return {0, 1};
        case PlaneId::XZ: return {0, 2};
        case PlaneId::YZ: return {1, 2};
    }
    throw DataError("invalid plane id");
}

inline const char* plane_name(PlaneId plane) {
    switch (plane) {
        case PlaneId::XY: return "XY";
        case PlaneId::XZ: return "XZ";
        case PlaneId::YZ: return "YZ";
    }
    return "?";
}

struct Pixel {
    double u = 0.0;  // column, 0 at the minimum of the first kept axis
    double v = 0.0;  // row, 0 at the maximum of the second kept axis
};

// Affine map from world coordinates to continuous pixel coordinates
// [0,W) x [0,H). Shared by skeleton rasterization and triplane sampling so
// the two stay aligned. Out-of-bounds points map outside the grid unclamped.
inline Pixel project_to_plane(const Vec3& p, PlaneId plane, const WorldBounds& bounds, int height,
                              int width) {
    const auto axes = plane_axes(plane);
    const double a = p[axes[0]], b = p[axes[1]];
    const double a_min = bounds.min[axes[0]], a_max = bounds.max[axes[0]];
    const double b_min = bounds.min[axes[1]], b_max = bounds.max[axes[1]];
    Pixel px;
    px.u = (a - a_min) / (a_max - a_min) * static_cast<double>(width);
    px.v = (b_max - b) / (b_max - b_min) * static_cast<double>(height);
    return px;
}

// Squared distance from a point to a segment, all in 2D pixel space.
// Degenerate segments collapse to the point distance.
inline double point_segment_dist_sq(double px, double py, double ax, double ay, double bx,
                                    double by) {
    const double dx = bx - ax, dy = by - ay;
    const double len_sq = dx * dx + dy * dy;
    double t = 0.0;
    if (len_sq > 0.0) {
        t = ((px - ax) * dx + (py - ay) * dy) / len_sq;
        t = std::clamp(t, 0.0, 1.0);
    }
    const double cx = ax + t * dx - px;
    const double cy = ay + t * dy - py;
    return cx * cx + cy * cy;
}

// Same, returning the clamped segment parameter as well (used by the
// synthetic ground-truth construction).
inline double point_segment_dist_sq_param(double px, double py, double ax, double ay, double bx,
                                          double by, double* t_out) {
    const double dx = bx - ax, dy = by - ay;
    const double len_sq = dx * dx + dy * dy;
    double t = 0.0;
    if (len_sq > 0.0) t = std::clamp(((px - ax) * dx + (py - ay) * dy) / len_sq, 0.0, 1.0);
    *t_out = t;
    const double cx = ax + t * dx - px;
    const double cy = ay + t * dy - py;
    return cx * cx + cy * cy;
}

// 3D point-to-segment distance (capsule oracle support).
inline double point_segment_dist3(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len_sq = ab.dot(ab);
    double t = 0.0;
    if (len_sq > 0.0) t = std::clamp((p - a).dot(ab) / len_sq, 0.0, 1.0);
    return (a + ab * t - p).norm();
}

}  // namespace triposer
