// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "triposer/errors.hpp"
#include "triposer/rng.hpp"
#include "triposer/skeleton.hpp"
#include "triposer/triplane.hpp"

using namespace triposer;
namespace fs = std::filesystem;

namespace {

Triplane random_triplane(Rng& rng, int c, int h, int w) {
    Triplane t = Triplane::zeros(c, h, w);
    rng.fill_uniform(t.geometry, -1.0, 1.0);
    rng.fill_uniform(t.color, -1.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("flatten and unflatten are exact inverses with the plane-major layout") {
    Rng rng(1);
    Tensor planes({3, 6, 8, 8});
    rng.fill_uniform(planes, -2.0, 2.0);
    const Tensor flat = flatten(planes);
    CHECK(flat.shape() == std::vector<int>{18, 8, 8});
    // flat channel k is plane k/C, channel k%C; channel 7 with C=6 -> (1, 1)
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) CHECK(flat.at(7, r, c) == planes.at(1, 1, r, c));
    const Tensor back = unflatten(flat, 6);
    for (int64_t i = 0; i < planes.numel(); ++i) CHECK(back[i] == planes[i]);

    // C=1 keeps the data identical
    Tensor p1({3, 1, 4, 4});
    rng.fill_uniform(p1, -1.0, 1.0);
    const Tensor f1 = flatten(p1);
    CHECK(f1.shape() == std::vector<int>{3, 4, 4});
    for (int64_t i = 0; i < p1.numel(); ++i) CHECK(f1[i] == p1[i]);

    CHECK_THROWS_AS(unflatten(flat, 5), DataError);
}

TEST_CASE("query sums constant planes and vanishes on the zero triplane") {
    Triplane t = Triplane::zeros(4, 16, 16);
    t.geometry.fill(0.75);
    const auto center = query(t, {0, 0, 0}, TriplaneField::Geometry);
    for (double v : center) CHECK(v == doctest::Approx(3 * 0.75).epsilon(1e-12));

    const Triplane z = Triplane::zeros(4, 16, 16);
    for (double v : query(z, {0.3, -0.2, 0.9}, TriplaneField::Geometry)) CHECK(v == 0.0);
    for (double v : query(z, {5, 5, 5}, TriplaneField::Color)) CHECK(v == 0.0);
}

TEST_CASE("query matches the standalone bilinear oracle at random points") {
    Rng rng(42);
    const Triplane t = random_triplane(rng, 5, 12, 12);
    for (int i = 0; i < 10; ++i) {
        const Vec3 p{rng.uniform(-0.99, 0.99), rng.uniform(-0.99, 0.99), rng.uniform(-0.99, 0.99)};
        const auto got_g = query(t, p, TriplaneField::Geometry);
        const auto got_c = query(t, p, TriplaneField::Color);
        const auto want_g = oracle::query_triplane(t, p, true);
        const auto want_c = oracle::query_triplane(t, p, false);
        for (int c = 0; c < 5; ++c) {
            CHECK(got_g[static_cast<size_t>(c)] ==
                  doctest::Approx(want_g[static_cast<size_t>(c)]).epsilon(1e-12));
            CHECK(got_c[static_cast<size_t>(c)] ==
                  doctest::Approx(want_c[static_cast<size_t>(c)]).epsilon(1e-12));
        }
    }
}

TEST_CASE("query is linear in the triplane values") {
    Rng rng(43);
    const Triplane t1 = random_triplane(rng, 3, 10, 10);
    const Triplane t2 = random_triplane(rng, 3, 10, 10);
    const double a = 1.7, b = -0.6;
    Triplane mix = Triplane::zeros(3, 10, 10);
    for (int64_t i = 0; i < mix.geometry.numel(); ++i) {
        mix.geometry[i] = a * t1.geometry[i] + b * t2.geometry[i];
        mix.color[i] = a * t1.color[i] + b * t2.color[i];
    }
    for (int i = 0; i < 8; ++i) {
        const Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const auto qm = query(mix, p, TriplaneField::Geometry);
        const auto q1 = query(t1, p, TriplaneField::Geometry);
        const auto q2 = query(t2, p, TriplaneField::Geometry);
        for (size_t c = 0; c < qm.size(); ++c)
            CHECK(qm[c] == doctest::Approx(a * q1[c] + b * q2[c]).epsilon(1e-10));
    }
}

TEST_CASE("latent stack/unstack round-trips with per-plane geometry+color order") {
    Rng rng(5);
    const Triplane t = random_triplane(rng, 4, 8, 8);
    const Tensor latent = stack_latent(t);
    CHECK(latent.shape() == std::vector<int>{24, 8, 8});
    // plane 1 geometry channel 2 lives at flat channel 1*2C + 2
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            CHECK(latent.at(4 * 2 + 2, r, c) == t.geometry.at(1, 2, r, c));
            CHECK(latent.at(4 * 2 + 4 + 1, r, c) == t.color.at(1, 1, r, c));
        }
    const Triplane back = unstack_latent(latent, 4, t.bounds);
    for (int64_t i = 0; i < t.geometry.numel(); ++i) {
        CHECK(back.geometry[i] == t.geometry[i]);
        CHECK(back.color[i] == t.color[i]);
    }
}

TEST_CASE("concat_condition stacks latent, init and encoding per plane") {
    Rng rng(6);
    const int C = 6, H = 8, W = 8;
    const Triplane init = random_triplane(rng, C, H, W);
    Tensor latent({6 * C, H, W});
    rng.fill_uniform(latent, -1, 1);
    Tensor enc({3, 2 * C, H, W});
    rng.fill_uniform(enc, 0, 1);

    const Tensor stack = concat_condition(latent, init, enc);
    CHECK(stack.shape() == std::vector<int>{3, 6 * C, H, W});
    CHECK(flatten(stack).size(0) == 108);  // 3 * 6C with C=6

    for (int p = 0; p < 3; ++p)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                for (int k = 0; k < 2 * C; ++k)
                    CHECK(stack.at(p, k, r, c) == latent.at(p * 2 * C + k, r, c));
                for (int k = 0; k < C; ++k) {
                    CHECK(stack.at(p, 2 * C + k, r, c) == init.geometry.at(p, k, r, c));
                    CHECK(stack.at(p, 3 * C + k, r, c) == init.color.at(p, k, r, c));
                }
                for (int k = 0; k < 2 * C; ++k)
                    CHECK(stack.at(p, 4 * C + k, r, c) == enc.at(p, k, r, c));
            }

    // zero encoding leaves latent and init slices bit-identical
    Tensor zero_enc({3, 2 * C, H, W});
    const Tensor stack2 = concat_condition(latent, init, zero_enc);
    for (int p = 0; p < 3; ++p)
        for (int k = 0; k < 4 * C; ++k)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c)
                    CHECK(stack2.at(p, k, r, c) == stack.at(p, k, r, c));

    Tensor bad({3, 2 * C, H, W / 2});
    CHECK_THROWS_AS(concat_condition(latent, init, bad), DataError);
}

TEST_CASE("triplane serialization round-trips bitwise and rejects corruption") {
    const fs::path dir = fs::temp_directory_path() / "triposer_trpl_test";
    fs::create_directories(dir);
    const std::string path = (dir / "t.trpl").string();

    Rng rng(77);
    Triplane t = random_triplane(rng, 6, 16, 16);
    // values must survive the float32 payload exactly: quantize first
    for (int64_t i = 0; i < t.geometry.numel(); ++i) {
        t.geometry[i] = static_cast<float>(t.geometry[i]);
        t.color[i] = static_cast<float>(t.color[i]);
    }
    t.bounds.min = {-1.5, -1, -2};
    t.bounds.max = {1.5, 1, 2};
    save_triplane(t, path);

    // header + bounds + two float32 blocks
    const auto size = fs::file_size(path);
    CHECK(size == 24 + 48 + 2ull * 3 * 6 * 16 * 16 * 4);

    TriplaneKind kind = TriplaneKind::SkeletonEncoding;
    const Triplane back = load_triplane(path, &kind);
    CHECK(kind == TriplaneKind::Avatar);
    CHECK(back.bounds.min.x == t.bounds.min.x);
    CHECK(back.bounds.max.z == t.bounds.max.z);
    for (int64_t i = 0; i < t.geometry.numel(); ++i) {
        CHECK(back.geometry[i] == t.geometry[i]);
        CHECK(back.color[i] == t.color[i]);
    }

    // byte-identical re-serialization
    save_triplane(back, (dir / "t2.trpl").string());
    std::ifstream f1(path, std::ios::binary), f2(dir / "t2.trpl", std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // corrupted magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_triplane(path), DataError);

    // truncation
    save_triplane(t, path);
    fs::resize_file(path, size / 2);
    CHECK_THROWS_AS(load_triplane(path), DataError);

    // bad version
    save_triplane(t, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const uint32_t v = 9;
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
    CHECK_THROWS_AS(load_triplane(path), DataError);

    // non-finite payload
    save_triplane(t, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(24 + 48);
        const float nan_v = std::nanf("");
        f.write(reinterpret_cast<const char*>(&nan_v), 4);
    }
    CHECK_THROWS_AS(load_triplane(path), NumericError);

    fs::remove_all(dir);
}

TEST_CASE("paper-scale file size arithmetic holds for C=6 at 128x128") {
    const fs::path dir = fs::temp_directory_path() / "triposer_trpl_size";
    fs::create_directories(dir);
    const Triplane t = Triplane::zeros(6, 128, 128);
    const std::string path = (dir / "big.trpl").string();
    save_triplane(t, path);
    CHECK(fs::file_size(path) == 24 + 48 + 2ull * 3 * 6 * 128 * 128 * 4);
    fs::remove_all(dir);
}
