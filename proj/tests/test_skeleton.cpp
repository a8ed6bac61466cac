// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "triposer/errors.hpp"
#include "triposer/rng.hpp"
#include "triposer/skeleton.hpp"

using namespace triposer;

namespace {

Skeleton two_joint_skeleton() {
    Skeleton s;
    s.joints = {{0, 0, 0}, {0, 1, 0}};
    s.bones = {{0, 1}};
    return s;
}

Skeleton random_skeleton(Rng& rng, int n) {
    Skeleton s;
    for (int i = 0; i < n; ++i)
        s.joints.push_back({rng.uniform(-0.95, 0.95), rng.uniform(-0.95, 0.95),
                            rng.uniform(-0.95, 0.95)});
    for (int i = 1; i < n; ++i) s.bones.emplace_back(rng.uniform_int(0, i - 1), i);
    return s;
}

}  // namespace

TEST_CASE("projection maps cube center and corners per the image convention") {
    Skeleton s;
    s.joints = {{0, 0, 0}, {1, 1, 1}, {0.25, -0.5, 0.75}};
    s.bones = {{0, 1}, {0, 2}};
    const WorldBounds b;

    const auto xy = project(s, PlaneId::XY, b, 8, 8);
    CHECK(xy[0].u == doctest::Approx(4.0));
    CHECK(xy[0].v == doctest::Approx(4.0));

    const auto xz = project(s, PlaneId::XZ, b, 8, 8);
    CHECK(xz[1].u == doctest::Approx(8.0));
    CHECK(xz[1].v == doctest::Approx(0.0));

    // frozen from the standalone affine oracle: (y,z)=(-0.5,0.75) at 64x64
    const auto yz = project(s, PlaneId::YZ, b, 64, 64);
    CHECK(yz[2].u == doctest::Approx(16.0).epsilon(1e-12));
    CHECK(yz[2].v == doctest::Approx(8.0).epsilon(1e-12));

    // cross-check every joint/plane against the oracle
    for (PlaneId plane : kPlaneOrder) {
        const auto got = project(s, plane, b, 64, 64);
        for (size_t j = 0; j < s.joints.size(); ++j) {
            const Pixel want = oracle::project_point(s.joints[j], plane, b, 64, 64);
            CHECK(got[j].u == doctest::Approx(want.u).epsilon(1e-14));
            CHECK(got[j].v == doctest::Approx(want.v).epsilon(1e-14));
        }
    }
}

TEST_CASE("projection rejects bad grids and keeps out-of-bounds points unclamped") {
    const Skeleton s = two_joint_skeleton();
    const WorldBounds b;
    CHECK_THROWS_AS(project(s, PlaneId::XY, b, 1, 8), DataError);
    Skeleton out = s;
    out.joints[0] = {5.0, 5.0, 5.0};
    const auto px = project(out, PlaneId::XY, b, 8, 8);
    CHECK(px[0].u > 8.0);
    CHECK(px[0].v < 0.0);
}

TEST_CASE("two-joint bone rasterizes the documented index values") {
    const Skeleton s = two_joint_skeleton();
    const WorldBounds b;
    Tensor occ, idx;
    rasterize_encoding(s, PlaneId::XY, b, 32, 32, 1.5, 1.0, occ, idx);

    std::set<double> values;
    for (int64_t i = 0; i < idx.numel(); ++i)
        if (occ[i] > 0.0) values.insert(idx[i]);
    CHECK(values == std::set<double>{0.0, 0.5, 1.0});

    // every index-positive pixel is occupied
    for (int64_t i = 0; i < idx.numel(); ++i)
        if (idx[i] > 0.0) CHECK(occ[i] == 1.0);
}

TEST_CASE("skeleton outside bounds yields empty grids") {
    Skeleton s = two_joint_skeleton();
    for (auto& j : s.joints) j = j + Vec3{10, 10, 10};
    const WorldBounds b;
    Tensor occ, idx;
    rasterize_encoding(s, PlaneId::XY, b, 16, 16, 1.0, 0.5, occ, idx);
    CHECK(occ.max_abs() == 0.0);
    CHECK(idx.max_abs() == 0.0);
}

TEST_CASE("rasterizer matches the brute-force oracle on random skeletons") {
    Rng rng(20240811);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = rng.uniform_int(2, 24);
        const Skeleton s = random_skeleton(rng, n);
        const WorldBounds b;
        for (PlaneId plane : kPlaneOrder) {
            Tensor occ, idx, occ_ref, idx_ref;
            rasterize_encoding(s, plane, b, 64, 64, 1.0, 0.75, occ, idx);
            oracle::rasterize(s, plane, b, 64, 64, 1.0, 0.75, occ_ref, idx_ref);
            for (int64_t i = 0; i < occ.numel(); ++i) {
                REQUIRE(occ[i] == occ_ref[i]);
                REQUIRE(std::abs(idx[i] - idx_ref[i]) <= 1e-12);
            }
        }
    }
}

TEST_CASE("index values come from the finite value set of the skeleton") {
    Rng rng(7);
    const int n = 9;
    const Skeleton s = random_skeleton(rng, n);
    std::set<double> allowed{0.0};
    for (int i = 0; i < n; ++i) allowed.insert(static_cast<double>(i) / (n - 1));
    for (const auto& [i, j] : s.bones) allowed.insert(static_cast<double>(i + j) / (2.0 * (n - 1)));
    const SkeletonEncoding enc = encode_skeleton(s, WorldBounds{}, 48, 48);
    for (int p = 0; p < 3; ++p)
        for (int64_t i = 0; i < enc.index[p].numel(); ++i)
            CHECK(allowed.count(enc.index[static_cast<size_t>(p)][i]) == 1);
}

TEST_CASE("translation of joints and bounds together leaves grids unchanged") {
    Rng rng(99);
    const Skeleton s = random_skeleton(rng, 11);
    const Vec3 delta{0.37, -0.21, 0.11};
    Skeleton moved = s;
    for (auto& j : moved.joints) j = j + delta;
    WorldBounds shifted;
    shifted.min = WorldBounds{}.min + delta;
    shifted.max = WorldBounds{}.max + delta;

    const SkeletonEncoding a = encode_skeleton(s, WorldBounds{}, 32, 32);
    const SkeletonEncoding b = encode_skeleton(moved, shifted, 32, 32);
    for (int p = 0; p < 3; ++p) {
        for (int64_t i = 0; i < a.occupancy[p].numel(); ++i) {
            CHECK(a.occupancy[static_cast<size_t>(p)][i] == b.occupancy[static_cast<size_t>(p)][i]);
            CHECK(a.index[static_cast<size_t>(p)][i] ==
                  doctest::Approx(b.index[static_cast<size_t>(p)][i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("x-mirrored skeleton mirrors the XY occupancy about the vertical centerline") {
    // construct an exactly symmetric skeleton about x = 0
    Skeleton s;
    s.joints = {{0, -0.4, 0}, {0, 0.2, 0}, {0.5, 0.2, 0.1}, {-0.5, 0.2, 0.1}};
    s.bones = {{0, 1}, {1, 2}, {1, 3}};
    const int n = 64;
    const SkeletonEncoding enc = encode_skeleton(s, WorldBounds{}, n, n);
    Tensor occ_ref, idx_ref;
    oracle::rasterize(s, PlaneId::XY, WorldBounds{}, n, n, 1.0, 0.5, occ_ref, idx_ref);
    int mismatches = 0;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            if (enc.occupancy[0].at(r, c) != enc.occupancy[0].at(r, n - 1 - c)) ++mismatches;
    CHECK(mismatches <= n);  // at most a one-pixel seam from sampling parity
    // and the rasterizer still agrees with the oracle exactly
    for (int64_t i = 0; i < occ_ref.numel(); ++i) CHECK(enc.occupancy[0][i] == occ_ref[i]);
}

TEST_CASE("rasterization input validation") {
    Skeleton s;
    s.joints = {{0, 0, 0}};
    Tensor occ, idx;
    CHECK_THROWS_AS(rasterize_encoding(s, PlaneId::XY, WorldBounds{}, 8, 8, 1, 1, occ, idx),
                    DataError);
    Skeleton nan_skel = two_joint_skeleton();
    nan_skel.joints[0].x = std::nan("");
    CHECK_THROWS_AS(rasterize_encoding(nan_skel, PlaneId::XY, WorldBounds{}, 8, 8, 1, 1, occ, idx),
                    DataError);
    const Skeleton ok = two_joint_skeleton();
    CHECK_THROWS_AS(rasterize_encoding(ok, PlaneId::XY, WorldBounds{}, 8, 8, 0.1, 1, occ, idx),
                    DataError);
}

TEST_CASE("heatmap encoding follows the max-of-gaussians formula") {
    Skeleton s;
    s.joints = {{0, 0, 0}, {0.5, 0, 0}};
    s.bones = {{0, 1}};
    const int n = 64;
    const double sigma = 2.0;
    const HeatmapEncoding enc = encode_skeleton_heatmap(s, WorldBounds{}, n, n, sigma);

    const auto px = project(s, PlaneId::XY, WorldBounds{}, n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            double want = 0.0;
            for (const Pixel& j : px) {
                const double du = (c + 0.5) - j.u, dv = (r + 0.5) - j.v;
                want = std::max(want, std::exp(-(du * du + dv * dv) / (2 * sigma * sigma)));
            }
            CHECK(enc.maps[0].at(r, c) == doctest::Approx(want).epsilon(1e-12));
        }

    // joint placed so its XY projection lands exactly on the center of
    // pixel (row 24, col 16); the pixel two columns right sits at distance
    // exactly 2 px = sigma, so the map reads exp(-0.5) there
    Skeleton one;
    one.joints = {{2.0 * 16.5 / 64 - 1.0, 1.0 - 2.0 * 24.5 / 64, 0}, {10, 10, 10}};
    one.bones = {{0, 1}};
    const HeatmapEncoding h = encode_skeleton_heatmap(one, WorldBounds{}, 64, 64, 2.0);
    CHECK(h.maps[0].at(24, 16) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(h.maps[0].at(24, 18) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("heatmap ignores the bone list entirely") {
    Rng rng(5);
    Skeleton s = random_skeleton(rng, 8);
    Skeleton rewired = s;
    rewired.bones = {{0, 7}, {1, 6}, {2, 5}};
    const HeatmapEncoding a = encode_skeleton_heatmap(s, WorldBounds{}, 32, 32, 1.5);
    const HeatmapEncoding b = encode_skeleton_heatmap(rewired, WorldBounds{}, 32, 32, 1.5);
    for (int p = 0; p < 3; ++p)
        for (int64_t i = 0; i < a.maps[p].numel(); ++i)
            CHECK(a.maps[static_cast<size_t>(p)][i] == b.maps[static_cast<size_t>(p)][i]);
}

TEST_CASE("channel expansion replicates occupancy and index blocks") {
    Rng rng(3);
    const Skeleton s = random_skeleton(rng, 6);
    const SkeletonEncoding enc = encode_skeleton(s, WorldBounds{}, 16, 16);

    const Tensor c1 = expand_to_channels(enc, 1);
    CHECK(c1.shape() == std::vector<int>{3, 2, 16, 16});
    for (int p = 0; p < 3; ++p)
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c) {
                CHECK(c1.at(p, 0, r, c) == enc.occupancy[static_cast<size_t>(p)].at(r, c));
                CHECK(c1.at(p, 1, r, c) == enc.index[static_cast<size_t>(p)].at(r, c));
            }

    const int C = 6;
    const Tensor c6 = expand_to_channels(enc, C);
    CHECK(c6.shape() == std::vector<int>{3, 12, 16, 16});
    for (int p = 0; p < 3; ++p)
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c) {
                for (int k = 1; k < C; ++k) {
                    CHECK(c6.at(p, k, r, c) == c6.at(p, 0, r, c));
                    CHECK(c6.at(p, C + k, r, c) == c6.at(p, C, r, c));
                }
                // channel sum identity: C * (occupancy + index)
                double sum = 0.0;
                for (int k = 0; k < 2 * C; ++k) sum += c6.at(p, k, r, c);
                const double want = C * (enc.occupancy[static_cast<size_t>(p)].at(r, c) +
                                         enc.index[static_cast<size_t>(p)].at(r, c));
                CHECK(sum == doctest::Approx(want).epsilon(1e-12));
            }
}

TEST_CASE("skeleton and motion JSON files round-trip and validate") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "triposer_skel_test";
    fs::create_directories(dir);

    Rng rng(12);
    const Skeleton s = random_skeleton(rng, 7);
    save_skeleton_json(s, (dir / "s.json").string());
    const Skeleton loaded = load_skeleton_json((dir / "s.json").string());
    CHECK(loaded.bones == s.bones);
    REQUIRE(loaded.joints.size() == s.joints.size());
    for (size_t i = 0; i < s.joints.size(); ++i) {
        CHECK(loaded.joints[i].x == s.joints[i].x);
        CHECK(loaded.joints[i].y == s.joints[i].y);
        CHECK(loaded.joints[i].z == s.joints[i].z);
    }

    MotionSequence motion;
    motion.frames = {s, s, s};
    motion.frames[1].joints[0].x += 0.25;
    save_motion_json(motion, (dir / "m.json").string());
    const MotionSequence m2 = load_motion_json((dir / "m.json").string());
    CHECK(m2.frame_count() == 3);
    CHECK(m2.frames[1].joints[0].x == motion.frames[1].joints[0].x);

    // invalid inputs
    CHECK_THROWS_AS(load_skeleton_json((dir / "missing.json").string()), DataError);
    {
        std::ofstream bad(dir / "bad.json");
        bad << "{\"joints\": [[0,0,0],[1,0,0]], \"bones\": [[1,1]]}";
    }
    CHECK_THROWS_AS(load_skeleton_json((dir / "bad.json").string()), DataError);
    {
        std::ofstream bad(dir / "dup.json");
        bad << "{\"joints\": [[0,0,0],[1,0,0]], \"bones\": [[0,1],[0,1]]}";
    }
    CHECK_THROWS_AS(load_skeleton_json((dir / "dup.json").string()), DataError);
    fs::remove_all(dir);
}

TEST_CASE("motion frames must share topology") {
    MotionSequence m;
    m.frames = {two_joint_skeleton(), two_joint_skeleton()};
    m.frames[1].joints.push_back({1, 1, 1});
    m.frames[1].bones.emplace_back(0, 2);
    CHECK_THROWS_AS(m.validate(), DataError);
}
