// SPDX-License-Identifier: Apache-2.0
#include "triposer/triplane.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "triposer/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "triplane serialization assumes a little-endian host");

namespace triposer {

Triplane Triplane::zeros(int channels, int height, int width, const WorldBounds& bounds) {
    Triplane t;
    t.geometry = Tensor({3, channels, height, width});
    t.color = Tensor({3, channels, height, width});
    t.bounds = bounds;
    return t;
}

void Triplane::validate() const {
    if (geometry.dim() != 4 || geometry.size(0) != 3)
        throw DataError("triplane geometry must be {3, C, H, W}");
    if (!geometry.same_shape(color))
        throw DataError("triplane geometry and color must share C, H, W");
    bounds.require_valid();
    if (!geometry.all_finite() || !color.all_finite())
        throw NumericError("triplane contains non-finite values");
}

Tensor flatten(const Tensor& planes) {
    if (planes.dim() != 4 || planes.size(0) != 3)
        throw DataError("flatten expects a {3, C, H, W} tensor");
    Tensor flat({planes.size(0) * planes.size(1), planes.size(2), planes.size(3)});
    std::memcpy(flat.data(), planes.data(), sizeof(double) * planes.numel());
    return flat;
}

Tensor unflatten(const Tensor& flat, int channels) {
    if (flat.dim() != 3 || channels < 1 || flat.size(0) != 3 * channels)
        throw DataError("unflatten expects a {3C, H, W} tensor");
    Tensor planes({3, channels, flat.size(1), flat.size(2)});
    std::memcpy(planes.data(), flat.data(), sizeof(double) * flat.numel());
    return planes;
}

namespace {

// Bilinear sample of one plane's channels at continuous pixel coordinates,
// clamp-to-edge. Accumulates into out[c].
void sample_plane(const Tensor& planes, int plane, double u, double v,
                  std::vector<double>& out) {
    const int c_count = planes.size(1), h = planes.size(2), w = planes.size(3);
    const double sx = u - 0.5;  // grid of pixel centers
    const double sy = v - 0.5;
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const double fx = sx - x0, fy = sy - y0;
    const int x0c = std::clamp(x0, 0, w - 1), x1c = std::clamp(x0 + 1, 0, w - 1);
    const int y0c = std::clamp(y0, 0, h - 1), y1c = std::clamp(y0 + 1, 0, h - 1);
    const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
    const double w01 = (1 - fx) * fy, w11 = fx * fy;
    for (int c = 0; c < c_count; ++c) {
        out[static_cast<size_t>(c)] += w00 * planes.at(plane, c, y0c, x0c) +
                                       w10 * planes.at(plane, c, y0c, x1c) +
                                       w01 * planes.at(plane, c, y1c, x0c) +
                                       w11 * planes.at(plane, c, y1c, x1c);
    }
}

}  // namespace

std::vector<double> query(const Triplane& t, const Vec3& p, TriplaneField field) {
    if (!p.finite()) throw DataError("query point must be finite");
    const Tensor& planes = field == TriplaneField::Geometry ? t.geometry : t.color;
    std::vector<double> out(static_cast<size_t>(t.channels()), 0.0);
    if (!t.bounds.contains(p)) return out;
    for (int pi = 0; pi < 3; ++pi) {
        const Pixel px = project_to_plane(p, kPlaneOrder[pi], t.bounds, t.height(), t.width());
        sample_plane(planes, pi, px.u, px.v, out);
    }
    return out;
}

Tensor stack_latent(const Triplane& t) {
    const int c = t.channels(), h = t.height(), w = t.width();
    Tensor latent({6 * c, h, w});
    const int64_t plane_sz = static_cast<int64_t>(c) * h * w;
    const int64_t map_sz = static_cast<int64_t>(h) * w;
    for (int p = 0; p < 3; ++p) {
        std::memcpy(latent.data() + (2 * p) * c * map_sz, t.geometry.data() + p * plane_sz,
                    sizeof(double) * plane_sz);
        std::memcpy(latent.data() + (2 * p + 1) * c * map_sz, t.color.data() + p * plane_sz,
                    sizeof(double) * plane_sz);
    }
    return latent;
}

Triplane unstack_latent(const Tensor& latent, int channels, const WorldBounds& bounds) {
    if (latent.dim() != 3 || latent.size(0) != 6 * channels)
        throw DataError("latent must be {6C, H, W}");
    const int h = latent.size(1), w = latent.size(2);
    Triplane t = Triplane::zeros(channels, h, w, bounds);
    const int64_t plane_sz = static_cast<int64_t>(channels) * h * w;
    const int64_t map_sz = static_cast<int64_t>(h) * w;
    for (int p = 0; p < 3; ++p) {
        std::memcpy(t.geometry.data() + p * plane_sz, latent.data() + (2 * p) * channels * map_sz,
                    sizeof(double) * plane_sz);
        std::memcpy(t.color.data() + p * plane_sz, latent.data() + (2 * p + 1) * channels * map_sz,
                    sizeof(double) * plane_sz);
    }
    return t;
}

Tensor concat_condition(const Tensor& latent, const Triplane& init, const Tensor& encoding) {
    const int c = init.channels(), h = init.height(), w = init.width();
    if (latent.dim() != 3 || latent.size(0) != 6 * c || latent.size(1) != h ||
        latent.size(2) != w)
        throw DataError("concat_condition: latent must be {6C, H, W} matching init");
    if (encoding.dim() != 4 || encoding.size(0) != 3 || encoding.size(1) != 2 * c ||
        encoding.size(2) != h || encoding.size(3) != w)
        throw DataError("concat_condition: encoding must be {3, 2C, H, W} matching init");

    Tensor out({3, 6 * c, h, w});
    const int64_t map_sz = static_cast<int64_t>(h) * w;
    for (int p = 0; p < 3; ++p) {
        double* dst = out.data() + static_cast<int64_t>(p) * 6 * c * map_sz;
        // latent geometry+color for this plane
        std::memcpy(dst, latent.data() + static_cast<int64_t>(p) * 2 * c * map_sz,
                    sizeof(double) * 2 * c * map_sz);
        // init geometry, init color
        std::memcpy(dst + 2 * c * map_sz,
                    init.geometry.data() + static_cast<int64_t>(p) * c * map_sz,
                    sizeof(double) * c * map_sz);
        std::memcpy(dst + 3 * c * map_sz,
                    init.color.data() + static_cast<int64_t>(p) * c * map_sz,
                    sizeof(double) * c * map_sz);
        // occupancy block, index block
        std::memcpy(dst + 4 * c * map_sz,
                    encoding.data() + static_cast<int64_t>(p) * 2 * c * map_sz,
                    sizeof(double) * 2 * c * map_sz);
    }
    return out;
}

namespace {

constexpr char kMagic[4] = {'T', 'R', 'P', 'L'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& in, const std::string& path) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw DataError("truncated triplane file: " + path);
    return v;
}

void write_block_f32(std::ostream& out, const Tensor& t) {
    std::vector<float> buf(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void read_block_f32(std::istream& in, Tensor& t, const std::string& path) {
    std::vector<float> buf(static_cast<size_t>(t.numel()));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw DataError("truncated triplane payload: " + path);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = buf[static_cast<size_t>(i)];
}

}  // namespace

void save_triplane(const Triplane& t, const std::string& path, TriplaneKind kind) {
    t.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<uint32_t>(kind));
    write_u32(out, static_cast<uint32_t>(t.channels()));
    write_u32(out, static_cast<uint32_t>(t.height()));
    write_u32(out, static_cast<uint32_t>(t.width()));
    const double b[6] = {t.bounds.min.x, t.bounds.min.y, t.bounds.min.z,
                         t.bounds.max.x, t.bounds.max.y, t.bounds.max.z};
    out.write(reinterpret_cast<const char*>(b), sizeof(b));
    write_block_f32(out, t.geometry);
    write_block_f32(out, t.color);
    if (!out) throw DataError("write failed: " + path);
}

Triplane load_triplane(const std::string& path, TriplaneKind* kind_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad magic, not a triplane file: " + path);
    const uint32_t version = read_u32(in, path);
    if (version != kVersion)
        throw DataError("unsupported triplane version " + std::to_string(version) + ": " + path);
    const uint32_t kind = read_u32(in, path);
    if (kind > 1) throw DataError("unknown triplane kind: " + path);
    const uint32_t c = read_u32(in, path);
    const uint32_t h = read_u32(in, path);
    const uint32_t w = read_u32(in, path);
    if (c == 0 || h < 2 || w < 2 || c > (1u << 16) || h > (1u << 16) || w > (1u << 16))
        throw DataError("implausible triplane dimensions: " + path);
    double b[6];
    in.read(reinterpret_cast<char*>(b), sizeof(b));
    if (!in) throw DataError("truncated triplane header: " + path);

    Triplane t = Triplane::zeros(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    t.bounds.min = {b[0], b[1], b[2]};
    t.bounds.max = {b[3], b[4], b[5]};
    read_block_f32(in, t.geometry, path);
    read_block_f32(in, t.color, path);
    in.peek();
    if (!in.eof()) throw DataError("trailing bytes after triplane payload: " + path);
    t.validate();
    if (kind_out) *kind_out = static_cast<TriplaneKind>(kind);
    return t;
}

}  // namespace triposer
