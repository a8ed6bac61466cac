// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "triposer/errors.hpp"
#include "triposer/renderer.hpp"
#include "triposer/synthetic.hpp"

using namespace triposer;
namespace fs = std::filesystem;

namespace {

// Non-coplanar three-bone body with chunky limbs; the workhorse for the
// render checks.
CapsuleCharacter tripod_character() {
    CapsuleCharacter c;
    c.rest.joints = {{0, -0.1, 0}, {0.45, 0.3, 0.1}, {-0.4, 0.25, -0.3}, {0.05, -0.55, 0.35}};
    c.rest.bones = {{0, 1}, {0, 2}, {0, 3}};
    c.bone_radii = {0.11, 0.10, 0.12};
    c.bone_colors = {{0.9, 0.2, 0.1}, {0.1, 0.8, 0.2}, {0.2, 0.3, 0.9}};
    return c;
}

}  // namespace

TEST_CASE("analytic decode: zero triplane is near-empty, on-axis is dense and colored") {
    const RenderConfig cfg;
    const Triplane zero = Triplane::zeros(4, 32, 32);
    const DecodeResult empty = decode(zero, {0, 0, 0}, cfg);
    CHECK(empty.density == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-9));
    CHECK(empty.density < 1e-4);
    for (double v : empty.rgb) CHECK(v == 0.0);

    const CapsuleCharacter c = tripod_character();
    const Triplane t = ground_truth_triplane(c, c.rest, 4, 64, 64, WorldBounds{});
    // a point on the first bone axis: halfway between joints 0 and 1
    const Vec3 mid = (c.rest.joints[0] + c.rest.joints[1]) * 0.5;
    const DecodeResult on_axis = decode(t, mid, cfg);
    CHECK(on_axis.density > 5.0);  // softplus(k/2) with k = 20
    CHECK(on_axis.rgb[0] > 0.5);   // bone 0 is red
}

TEST_CASE("decoded density tracks the capsule indicator within the smoothing band") {
    CapsuleCharacter c;
    c.rest.joints = {{-0.4, 0.0, 0.0}, {0.4, 0.0, 0.0}};
    c.rest.bones = {{0, 1}};
    c.bone_radii = {0.12};
    c.bone_colors = {{1, 0, 0}};
    const int n = 64;
    const Triplane t = ground_truth_triplane(c, c.rest, 4, n, n, WorldBounds{});
    const RenderConfig cfg;
    const double tau = 2.0 * 2.0 / n;  // 2 px in world units

    Rng rng(11);
    int checked = 0;
    for (int trial = 0; trial < 4000; ++trial) {
        const Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double sdf =
            point_segment_dist3(p, c.rest.joints[0], c.rest.joints[1]) - c.bone_radii[0];
        if (std::abs(sdf) < 2.0 * tau) continue;  // skip the smoothing band
        const DecodeResult d = decode(t, p, cfg);
        if (sdf < 0) {
            CHECK(d.density > 1.0);
        } else {
            CHECK(d.density < 0.5);
        }
        ++checked;
    }
    CHECK(checked > 3000);
}

TEST_CASE("zero triplane renders fully transparent") {
    const Triplane zero = Triplane::zeros(4, 16, 16);
    RenderConfig cfg;
    cfg.size = 16;
    cfg.samples_per_ray = 8;
    const Image img = render(zero, cfg);
    CHECK(img.alpha.max_abs() < 1e-3);
    CHECK(img.rgb.max_abs() < 1e-3);
}

TEST_CASE("silhouette agrees with the capsule ray-march oracle at 64x64") {
    const CapsuleCharacter c = tripod_character();
    const Triplane t = ground_truth_triplane(c, c.rest, 4, 64, 64, WorldBounds{});
    RenderConfig cfg;
    cfg.size = 64;
    cfg.samples_per_ray = 96;
    const Image img = render(t, cfg);
    const Tensor mask =
        oracle::capsule_silhouette(c, c.rest, WorldBounds{}, 64, /*view_axis=*/2, true);
    const double iou = oracle::iou(img.alpha, mask, 0.5, 0.5);
    CHECK(iou >= 0.95);
}

TEST_CASE("doubling samples-per-ray changes pixels by less than 1e-2") {
    const CapsuleCharacter c = tripod_character();
    const Triplane t = ground_truth_triplane(c, c.rest, 4, 64, 64, WorldBounds{});
    RenderConfig lo;
    lo.size = 48;
    lo.samples_per_ray = 128;
    RenderConfig hi = lo;
    hi.samples_per_ray = 256;
    const Image a = render(t, lo);
    const Image b = render(t, hi);
    double max_diff = 0.0;
    for (int64_t i = 0; i < a.rgb.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(a.rgb[i] - b.rgb[i]));
    for (int64_t i = 0; i < a.alpha.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(a.alpha[i] - b.alpha[i]));
    CHECK(max_diff < 1e-2);
}

TEST_CASE("raising density scale never decreases alpha") {
    const CapsuleCharacter c = tripod_character();
    const Triplane t = ground_truth_triplane(c, c.rest, 4, 32, 32, WorldBounds{});
    RenderConfig lo;
    lo.size = 24;
    lo.samples_per_ray = 24;
    RenderConfig hi = lo;
    hi.density_scale = lo.density_scale * 3.0;
    const Image a = render(t, lo);
    const Image b = render(t, hi);
    for (int64_t i = 0; i < a.alpha.numel(); ++i) CHECK(b.alpha[i] >= a.alpha[i] - 1e-12);
}

TEST_CASE("+z view of a z-symmetric body equals the mirrored -z view") {
    // symmetric about z = 0
    CapsuleCharacter c;
    c.rest.joints = {{-0.3, -0.2, 0.0}, {0.4, 0.35, 0.0}};
    c.rest.bones = {{0, 1}};
    c.bone_radii = {0.14};
    c.bone_colors = {{0.8, 0.6, 0.1}};
    const Triplane t = ground_truth_triplane(c, c.rest, 4, 48, 48, WorldBounds{});
    RenderConfig cfg;
    cfg.size = 32;
    cfg.samples_per_ray = 48;
    cfg.view = ViewAxis::PosZ;
    const Image pos = render(t, cfg);
    cfg.view = ViewAxis::NegZ;
    const Image neg = render(t, cfg);
    for (int r = 0; r < 32; ++r)
        for (int q = 0; q < 32; ++q) {
            CHECK(pos.alpha.at(r, q) == doctest::Approx(neg.alpha.at(r, 31 - q)).epsilon(1e-9));
            for (int k = 0; k < 3; ++k)
                CHECK(pos.rgb.at(r, q, k) ==
                      doctest::Approx(neg.rgb.at(r, 31 - q, k)).epsilon(1e-9));
        }
}

TEST_CASE("rendering is deterministic") {
    const CapsuleCharacter c = tripod_character();
    const Triplane t = ground_truth_triplane(c, c.rest, 4, 32, 32, WorldBounds{});
    RenderConfig cfg;
    cfg.size = 24;
    cfg.samples_per_ray = 16;
    const Image a = render(t, cfg);
    const Image b = render(t, cfg);
    for (int64_t i = 0; i < a.rgb.numel(); ++i) CHECK(a.rgb[i] == b.rgb[i]);
}

TEST_CASE("render loss gradient matches finite differences on the triplane") {
    const CapsuleCharacter c = tripod_character();
    Triplane t = ground_truth_triplane(c, c.rest, 4, 16, 16, WorldBounds{});
    RenderConfig cfg;
    cfg.size = 12;
    cfg.samples_per_ray = 10;
    // nudge values off the clamp boundaries so the loss is differentiable
    for (int64_t i = 0; i < t.geometry.numel(); ++i)
        t.geometry[i] = 0.05 + 0.9 * t.geometry[i];
    for (int64_t i = 0; i < t.color.numel(); ++i) t.color[i] = 0.05 + 0.9 * t.color[i];

    Image target = Image::zeros(12, 12);
    Rng rng(3);
    rng.fill_uniform(target.rgb, 0, 1);
    rng.fill_uniform(target.alpha, 0, 1);

    Tensor d_geo, d_col;
    const double base = render_mse_grad(t, target, cfg, d_geo, d_col);
    CHECK(std::isfinite(base));

    const double h = 1e-5;
    double worst = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        const bool geo = rng.uniform() < 0.5;
        Tensor& field = geo ? t.geometry : t.color;
        const Tensor& grad = geo ? d_geo : d_col;
        // probe only channels the analytic decoder reads
        const int ch = geo ? 0 : rng.uniform_int(0, 2);
        const int plane = rng.uniform_int(0, 2);
        const int rr = rng.uniform_int(0, 15), cc = rng.uniform_int(0, 15);
        const int64_t idx =
            ((static_cast<int64_t>(plane) * 4 + ch) * 16 + rr) * 16 + cc;
        const double saved = field[idx];
        field[idx] = saved + h;
        Tensor g1, g2;
        const double lp = render_mse_grad(t, target, cfg, g1, g2);
        field[idx] = saved - h;
        const double lm = render_mse_grad(t, target, cfg, g1, g2);
        field[idx] = saved;
        const double fd = (lp - lm) / (2 * h);
        const double an = grad[idx];
        const double denom = std::max(1e-7, std::abs(fd) + std::abs(an));
        worst = std::max(worst, std::abs(fd - an) / denom);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("PPM round-trips the quantized buffer exactly and rejects bad input") {
    const fs::path dir = fs::temp_directory_path() / "triposer_ppm_test";
    fs::create_directories(dir);
    Image img = Image::zeros(9, 13);
    Rng rng(6);
    rng.fill_uniform(img.rgb, 0, 1);
    const std::string path = (dir / "img.ppm").string();
    write_ppm(img, path);
    const Image back = read_ppm(path);
    CHECK(back.height == 9);
    CHECK(back.width == 13);
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 13; ++c)
            for (int k = 0; k < 3; ++k) {
                const double q = std::lround(std::clamp(img.rgb.at(r, c, k), 0.0, 1.0) * 255.0) / 255.0;
                CHECK(back.rgb.at(r, c, k) == doctest::Approx(q).epsilon(1e-12));
            }
    // second write is byte-identical
    write_ppm(back, (dir / "img2.ppm").string());
    std::ifstream f1(path, std::ios::binary), f2(dir / "img2.ppm", std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    CHECK_THROWS_AS(write_ppm(img, ""), DataError);
    CHECK_THROWS_AS(read_ppm((dir / "missing.ppm").string()), DataError);
    {
        std::ofstream bad(dir / "bad.ppm", std::ios::binary);
        bad << "P5\n4 4\n255\n";
    }
    CHECK_THROWS_AS(read_ppm((dir / "bad.ppm").string()), DataError);
    fs::remove_all(dir);
}

TEST_CASE("contact sheet tiles frames horizontally") {
    std::vector<Image> frames(14, Image::zeros(8, 8));
    for (int k = 0; k < 14; ++k) frames[static_cast<size_t>(k)].rgb.fill(k / 14.0);
    const Image sheet = contact_sheet(frames);
    CHECK(sheet.width == 14 * 8);
    CHECK(sheet.height == 8);
    CHECK(sheet.rgb.at(0, 3 * 8 + 1, 0) == doctest::Approx(3 / 14.0));
    CHECK_THROWS_AS(contact_sheet({}), DataError);
}

TEST_CASE("learned decoder serializes and evaluates") {
    const fs::path dir = fs::temp_directory_path() / "triposer_dec_test";
    fs::create_directories(dir);
    Rng rng(4);
    const LearnedDecoder dec = LearnedDecoder::make(4, 16, rng);
    const std::string path = (dir / "d.tpdc").string();
    dec.save(path);
    const LearnedDecoder back = LearnedDecoder::load(path);
    CHECK(back.in_dim == dec.in_dim);
    for (int64_t i = 0; i < dec.w1.numel(); ++i)
        CHECK(back.w1[i] == doctest::Approx(dec.w1[i]).epsilon(1e-7));

    const Triplane t = Triplane::zeros(4, 16, 16);
    RenderConfig cfg;
    cfg.decoder = DecoderMode::Learned;
    const DecodeResult r = decode(t, {0, 0, 0}, cfg, &back);
    CHECK(r.density >= 0.0);
    for (double v : r.rgb) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(decode(t, {0, 0, 0}, cfg, nullptr), DataError);
    fs::remove_all(dir);
}
