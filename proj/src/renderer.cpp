// SPDX-License-Identifier: Apache-2.0
#include "triposer/renderer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "triposer/errors.hpp"
#include "triposer/rng.hpp"

namespace triposer {

using nlohmann::json;

ViewAxis view_axis_from_name(const std::string& name) {
    if (name == "+x") return ViewAxis::PosX;
    if (name == "-x") return ViewAxis::NegX;
    if (name == "+y") return ViewAxis::PosY;
    if (name == "-y") return ViewAxis::NegY;
    if (name == "+z") return ViewAxis::PosZ;
    if (name == "-z") return ViewAxis::NegZ;
    if (name == "custom") return ViewAxis::Custom;
    throw DataError("unknown view axis: " + name + " (use +x/-x/+y/-y/+z/-z/custom)");
}

void RenderConfig::validate() const {
    if (size < 8) throw DataError("render size must be at least 8");
    if (samples_per_ray < 2) throw DataError("need at least 2 samples per ray");
    if (density_scale <= 0.0 || sharpness <= 0.0)
        throw DataError("density scale and sharpness must be positive");
}

Image Image::zeros(int height, int width) {
    Image img;
    img.height = height;
    img.width = width;
    img.rgb = Tensor({height, width, 3});
    img.alpha = Tensor({height, width});
    return img;
}

LearnedDecoder LearnedDecoder::make(int triplane_channels, int hidden, Rng& rng) {
    LearnedDecoder d;
    d.in_dim = 2 * triplane_channels;
    d.hidden = hidden;
    d.w1 = Tensor({hidden, d.in_dim});
    d.b1 = Tensor({hidden});
    d.w2 = Tensor({4, hidden});
    d.b2 = Tensor({4});
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d.in_dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (int64_t i = 0; i < d.w1.numel(); ++i) d.w1[i] = rng.normal() * s1;
    for (int64_t i = 0; i < d.w2.numel(); ++i) d.w2[i] = rng.normal() * s2;
    return d;
}

namespace {
constexpr char kDecoderMagic[4] = {'T', 'P', 'D', 'C'};
}

void LearnedDecoder::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write(kDecoderMagic, 4);
    const uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const std::string text = json{{"in_dim", in_dim}, {"hidden", hidden}}.dump();
    const uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Tensor* t : {&w1, &b1, &w2, &b2}) {
        std::vector<float> blob(static_cast<size_t>(t->numel()));
        for (int64_t i = 0; i < t->numel(); ++i) blob[static_cast<size_t>(i)] =
            static_cast<float>((*t)[i]);
        out.write(reinterpret_cast<const char*>(blob.data()),
                  static_cast<std::streamsize>(blob.size() * sizeof(float)));
    }
    if (!out) throw DataError("write failed: " + path);
}

LearnedDecoder LearnedDecoder::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kDecoderMagic, 4) != 0)
        throw DataError("bad magic, not a decoder file: " + path);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (!in || version != 1) throw DataError("unsupported decoder version: " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    if (!in || len > (1ull << 20)) throw DataError("corrupt decoder manifest: " + path);
    std::string text(static_cast<size_t>(len), '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError("bad decoder manifest: " + std::string(e.what()));
    }
    LearnedDecoder d;
    d.in_dim = j.at("in_dim").get<int>();
    d.hidden = j.at("hidden").get<int>();
    if (d.in_dim < 2 || d.hidden < 1) throw DataError("implausible decoder dims: " + path);
    d.w1 = Tensor({d.hidden, d.in_dim});
    d.b1 = Tensor({d.hidden});
    d.w2 = Tensor({4, d.hidden});
    d.b2 = Tensor({4});
    for (Tensor* t : {&d.w1, &d.b1, &d.w2, &d.b2}) {
        std::vector<float> blob(static_cast<size_t>(t->numel()));
        in.read(reinterpret_cast<char*>(blob.data()),
                static_cast<std::streamsize>(blob.size() * sizeof(float)));
        if (!in) throw DataError("truncated decoder payload: " + path);
        for (int64_t i = 0; i < t->numel(); ++i) (*t)[i] = blob[static_cast<size_t>(i)];
    }
    return d;
}

namespace {

double softplus(double x) {
    // numerically stable for both tails
    return x > 30.0 ? x : std::log1p(std::exp(std::min(x, 30.0)));
}

DecodeResult decode_learned(const Triplane& t, const Vec3& p, const LearnedDecoder& d) {
    const std::vector<double> qg = query(t, p, TriplaneField::Geometry);
    const std::vector<double> qc = query(t, p, TriplaneField::Color);
    std::vector<double> in;
    in.reserve(qg.size() + qc.size());
    in.insert(in.end(), qg.begin(), qg.end());
    in.insert(in.end(), qc.begin(), qc.end());
    if (static_cast<int>(in.size()) != d.in_dim)
        throw DataError("learned decoder input size mismatch");
    std::vector<double> h(static_cast<size_t>(d.hidden));
    for (int i = 0; i < d.hidden; ++i) {
        double s = d.b1[i];
        for (int j = 0; j < d.in_dim; ++j) s += d.w1.at(i, j) * in[static_cast<size_t>(j)];
        const double sg = 1.0 / (1.0 + std::exp(-s));
        h[static_cast<size_t>(i)] = s * sg;  // SiLU
    }
    double out[4];
    for (int i = 0; i < 4; ++i) {
        double s = d.b2[i];
        for (int j = 0; j < d.hidden; ++j) s += d.w2.at(i, j) * h[static_cast<size_t>(j)];
        out[i] = s;
    }
    DecodeResult r;
    r.density = softplus(out[0]);
    for (int i = 0; i < 3; ++i) r.rgb[static_cast<size_t>(i)] = 1.0 / (1.0 + std::exp(-out[i + 1]));
    return r;
}

}  // namespace

DecodeResult decode(const Triplane& t, const Vec3& p, const RenderConfig& cfg,
                    const LearnedDecoder* learned) {
    if (cfg.decoder == DecoderMode::Learned) {
        if (!learned) throw DataError("learned decoder mode requires decoder parameters");
        return decode_learned(t, p, *learned);
    }
    const std::vector<double> qg = query(t, p, TriplaneField::Geometry);
    const std::vector<double> qc = query(t, p, TriplaneField::Color);
    DecodeResult r;
    const double g0 = qg[0] / 3.0;
    r.density = softplus(cfg.sharpness * (g0 - 0.5));
    for (int i = 0; i < 3 && i < static_cast<int>(qc.size()); ++i)
        r.rgb[static_cast<size_t>(i)] = std::clamp(qc[static_cast<size_t>(i)] / 3.0, 0.0, 1.0);
    return r;
}

namespace {

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit
    double t0 = 0.0, t1 = 0.0;
    bool hit = false;
};

// Slab intersection against the bounds cube.
Ray clip_to_bounds(Vec3 origin, Vec3 dir, const WorldBounds& b) {
    Ray ray;
    ray.origin = origin;
    ray.dir = dir;
    double t0 = -1e30, t1 = 1e30;
    const double o[3] = {origin.x, origin.y, origin.z};
    const double d[3] = {dir.x, dir.y, dir.z};
    const double lo[3] = {b.min.x, b.min.y, b.min.z};
    const double hi[3] = {b.max.x, b.max.y, b.max.z};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) {
            if (o[a] < lo[a] || o[a] > hi[a]) return ray;
            continue;
        }
        double ta = (lo[a] - o[a]) / d[a];
        double tb = (hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (t0 < t1) {
        ray.t0 = t0;
        ray.t1 = t1;
        ray.hit = true;
    }
    return ray;
}

// Pixel -> ray for the configured camera. Axis views map the image like the
// matching triplane plane (viewer on the positive side; negative-side views
// mirror the first axis).
Ray make_ray(const RenderConfig& cfg, const WorldBounds& b, int r, int c) {
    const int n = cfg.size;
    const Vec3 center = (b.min + b.max) * 0.5;
    const Vec3 extent = b.max - b.min;

    auto axis_ray = [&](int ua, int va, int wa, bool flip_u, bool from_positive) {
        const double u_lo = b.min[ua], u_hi = b.max[ua];
        const double v_lo = b.min[va], v_hi = b.max[va];
        double u = u_lo + (c + 0.5) / n * (u_hi - u_lo);
        if (flip_u) u = u_hi - (c + 0.5) / n * (u_hi - u_lo);
        const double v = v_hi - (r + 0.5) / n * (v_hi - v_lo);
        Vec3 origin = center;
        Vec3 dir{0, 0, 0};
        double o[3] = {center.x, center.y, center.z};
        o[ua] = u;
        o[va] = v;
        o[wa] = from_positive ? b.max[wa] + 1.0 : b.min[wa] - 1.0;
        origin = {o[0], o[1], o[2]};
        double dd[3] = {0, 0, 0};
        dd[wa] = from_positive ? -1.0 : 1.0;
        dir = {dd[0], dd[1], dd[2]};
        return clip_to_bounds(origin, dir, b);
    };

    switch (cfg.view) {
        case ViewAxis::PosZ: return axis_ray(0, 1, 2, false, true);
        case ViewAxis::NegZ: return axis_ray(0, 1, 2, true, false);
        case ViewAxis::PosY: return axis_ray(0, 2, 1, false, true);
        case ViewAxis::NegY: return axis_ray(0, 2, 1, true, false);
        case ViewAxis::PosX: return axis_ray(1, 2, 0, false, true);
        case ViewAxis::NegX: return axis_ray(1, 2, 0, true, false);
        case ViewAxis::Custom: break;
    }
    const double az = cfg.azimuth_deg * M_PI / 180.0;
    const double el = cfg.elevation_deg * M_PI / 180.0;
    const Vec3 view_dir{-std::cos(el) * std::cos(az), -std::sin(el), -std::cos(el) * std::sin(az)};
    Vec3 up{0, 1, 0};
    Vec3 right = view_dir.cross(up);
    const double rn = right.norm();
    right = rn > 1e-9 ? right * (1.0 / rn) : Vec3{1, 0, 0};
    const Vec3 img_up = right.cross(view_dir);
    const double radius = 0.5 * extent.norm();
    const double u = (c + 0.5) / n * 2.0 * radius - radius;
    const double v = radius - (r + 0.5) / n * 2.0 * radius;
    const Vec3 origin = center - view_dir * (2.0 * extent.norm()) + right * u + img_up * v;
    return clip_to_bounds(origin, view_dir, b);
}

}  // namespace

Image render(const Triplane& t, const RenderConfig& cfg, const LearnedDecoder* learned) {
    cfg.validate();
    Image img = Image::zeros(cfg.size, cfg.size);
    const int s = cfg.samples_per_ray;
    for (int r = 0; r < cfg.size; ++r) {
        for (int c = 0; c < cfg.size; ++c) {
            const Ray ray = make_ray(cfg, t.bounds, r, c);
            if (!ray.hit) continue;
            const double step = (ray.t1 - ray.t0) / s;
            double transmittance = 1.0;
            double rgb[3] = {0, 0, 0};
            for (int i = 0; i < s; ++i) {
                const double ti = ray.t0 + (i + 0.5) * step;
                const Vec3 p = ray.origin + ray.dir * ti;
                const DecodeResult d = decode(t, p, cfg, learned);
                const double alpha = 1.0 - std::exp(-d.density * cfg.density_scale * step);
                const double w = transmittance * alpha;
                for (int k = 0; k < 3; ++k) rgb[k] += w * d.rgb[static_cast<size_t>(k)];
                transmittance *= 1.0 - alpha;
                if (transmittance < 1e-6) break;
            }
            for (int k = 0; k < 3; ++k) img.rgb.at(r, c, k) = std::clamp(rgb[k], 0.0, 1.0);
            img.alpha.at(r, c) = 1.0 - transmittance;
        }
    }
    return img;
}

namespace {

// Bilinear scatter-add of `value` into tensor(plane, channel) at the
// continuous pixel position of point p (same mapping as query()).
void scatter_plane(Tensor& grad, int plane, int channel, const Vec3& p, const WorldBounds& bounds,
                   double value) {
    const int h = grad.size(2), w = grad.size(3);
    const Pixel px = project_to_plane(p, kPlaneOrder[plane], bounds, h, w);
    const double sx = px.u - 0.5, sy = px.v - 0.5;
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const double fx = sx - x0, fy = sy - y0;
    const int x0c = std::clamp(x0, 0, w - 1), x1c = std::clamp(x0 + 1, 0, w - 1);
    const int y0c = std::clamp(y0, 0, h - 1), y1c = std::clamp(y0 + 1, 0, h - 1);
    grad.at(plane, channel, y0c, x0c) += value * (1 - fx) * (1 - fy);
    grad.at(plane, channel, y0c, x1c) += value * fx * (1 - fy);
    grad.at(plane, channel, y1c, x0c) += value * (1 - fx) * fy;
    grad.at(plane, channel, y1c, x1c) += value * fx * fy;
}

}  // namespace

double render_mse_grad(const Triplane& pred, const Image& target, const RenderConfig& cfg,
                       Tensor& d_geometry, Tensor& d_color) {
    cfg.validate();
    if (cfg.decoder != DecoderMode::Analytic)
        throw DataError("render_mse_grad supports the analytic decoder only");
    if (target.height != cfg.size || target.width != cfg.size)
        throw DataError("target image size mismatch");
    d_geometry = Tensor(pred.geometry.shape());
    d_color = Tensor(pred.color.shape());
    const int n = cfg.size, s = cfg.samples_per_ray;
    const double inv_count = 1.0 / (static_cast<double>(n) * n * 4.0);
    double loss = 0.0;

    std::vector<Vec3> pts(static_cast<size_t>(s));
    std::vector<double> alphas(static_cast<size_t>(s)), g0s(static_cast<size_t>(s)),
        trans(static_cast<size_t>(s));
    std::vector<std::array<double, 3>> rgbs(static_cast<size_t>(s)),
        qcs(static_cast<size_t>(s));

    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const Ray ray = make_ray(cfg, pred.bounds, r, c);
            double out_rgb[3] = {0, 0, 0};
            double transmittance = 1.0;
            int used = 0;
            double step = 0.0;
            if (ray.hit) {
                step = (ray.t1 - ray.t0) / s;
                for (int i = 0; i < s; ++i) {
                    const double ti = ray.t0 + (i + 0.5) * step;
                    const Vec3 p = ray.origin + ray.dir * ti;
                    const std::vector<double> qg = query(pred, p, TriplaneField::Geometry);
                    const std::vector<double> qc = query(pred, p, TriplaneField::Color);
                    const double g0 = qg[0] / 3.0;
                    const double density = softplus(cfg.sharpness * (g0 - 0.5));
                    const double alpha = 1.0 - std::exp(-density * cfg.density_scale * step);
                    pts[static_cast<size_t>(i)] = p;
                    g0s[static_cast<size_t>(i)] = g0;
                    alphas[static_cast<size_t>(i)] = alpha;
                    trans[static_cast<size_t>(i)] = transmittance;
                    for (int k = 0; k < 3; ++k) {
                        qcs[static_cast<size_t>(i)][static_cast<size_t>(k)] = qc[static_cast<size_t>(k)];
                        const double col = std::clamp(qc[static_cast<size_t>(k)] / 3.0, 0.0, 1.0);
                        rgbs[static_cast<size_t>(i)][static_cast<size_t>(k)] = col;
                        out_rgb[k] += transmittance * alpha * col;
                    }
                    transmittance *= 1.0 - alpha;
                    ++used;
                }
            }
            const double out_alpha = 1.0 - transmittance;

            double d_rgb[3];
            for (int k = 0; k < 3; ++k) {
                const double diff = out_rgb[k] - target.rgb.at(r, c, k);
                loss += diff * diff * inv_count;
                d_rgb[k] = 2.0 * diff * inv_count;
            }
            const double diff_a = out_alpha - target.alpha.at(r, c);
            loss += diff_a * diff_a * inv_count;
            double d_trans = -2.0 * diff_a * inv_count;  // dL/dT_final

            for (int i = used - 1; i >= 0; --i) {
                const double t_i = trans[static_cast<size_t>(i)];
                const double a_i = alphas[static_cast<size_t>(i)];
                const auto& rgb_i = rgbs[static_cast<size_t>(i)];
                const double dot_rgb = d_rgb[0] * rgb_i[0] + d_rgb[1] * rgb_i[1] +
                                       d_rgb[2] * rgb_i[2];
                const double d_alpha = t_i * dot_rgb - t_i * d_trans;
                // color: through clamp(qc/3)
                for (int k = 0; k < 3; ++k) {
                    const double qck = qcs[static_cast<size_t>(i)][static_cast<size_t>(k)] / 3.0;
                    if (qck > 0.0 && qck < 1.0) {
                        const double d_qc = t_i * a_i * d_rgb[k] / 3.0;
                        for (int plane = 0; plane < 3; ++plane)
                            scatter_plane(d_color, plane, k, pts[static_cast<size_t>(i)],
                                          pred.bounds, d_qc);
                    }
                }
                // density: alpha = 1 - exp(-sigma*scale*step)
                const double sp_arg = cfg.sharpness * (g0s[static_cast<size_t>(i)] - 0.5);
                const double density = softplus(sp_arg);
                const double d_sigma =
                    d_alpha * cfg.density_scale * step * std::exp(-density * cfg.density_scale * step);
                const double d_g0 = d_sigma * cfg.sharpness / (1.0 + std::exp(-sp_arg));
                const double d_qg = d_g0 / 3.0;
                for (int plane = 0; plane < 3; ++plane)
                    scatter_plane(d_geometry, plane, 0, pts[static_cast<size_t>(i)], pred.bounds,
                                  d_qg);
                // transmittance recurrence: T_{i+1} = T_i (1 - alpha_i)
                d_trans = a_i * dot_rgb + d_trans * (1.0 - a_i);
            }
        }
    }
    return loss;
}

void write_ppm(const Image& img, const std::string& path) {
    if (path.empty()) throw DataError("empty image path");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<size_t>(img.height) * img.width * 3);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            for (int k = 0; k < 3; ++k) {
                const double v = std::clamp(img.rgb.at(r, c, k), 0.0, 1.0);
                bytes[(static_cast<size_t>(r) * img.width + c) * 3 + static_cast<size_t>(k)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w < 1 || h < 1)
        throw DataError("unsupported PPM header: " + path);
    in.get();  // single whitespace after maxval
    Image img = Image::zeros(h, w);
    std::vector<unsigned char> bytes(static_cast<size_t>(h) * w * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw DataError("truncated PPM payload: " + path);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            for (int k = 0; k < 3; ++k)
                img.rgb.at(r, c, k) =
                    bytes[(static_cast<size_t>(r) * w + c) * 3 + static_cast<size_t>(k)] / 255.0;
            img.alpha.at(r, c) = 1.0;
        }
    return img;
}

Image contact_sheet(const std::vector<Image>& frames) {
    if (frames.empty()) throw DataError("contact sheet needs at least one frame");
    const int h = frames[0].height;
    int total_w = 0;
    for (const Image& f : frames) {
        if (f.height != h) throw DataError("contact sheet frames must share height");
        total_w += f.width;
    }
    Image sheet = Image::zeros(h, total_w);
    int off = 0;
    for (const Image& f : frames) {
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < f.width; ++c) {
                for (int k = 0; k < 3; ++k) sheet.rgb.at(r, off + c, k) = f.rgb.at(r, c, k);
                sheet.alpha.at(r, off + c) = f.alpha.at(r, c);
            }
        off += f.width;
    }
    return sheet;
}

}  // namespace triposer
