// SPDX-License-Identifier: Apache-2.0
#include "triposer/denoiser_blocks.hpp"

#include <cmath>

#include <Eigen/Core>

#include "triposer/errors.hpp"

namespace triposer {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

int ParamStore::add(const std::string& name, std::vector<int> shape) {
    ParamInfo info;
    info.name = name;
    info.shape = shape;
    info.offset = total_;
    infos_.push_back(std::move(info));
    values_.emplace_back(shape);
    grads_.emplace_back(shape);
    total_ += values_.back().numel();
    return static_cast<int>(values_.size()) - 1;
}

void ParamStore::zero_grads() {
    for (Tensor& g : grads_) g.fill(0.0);
}

std::vector<double> ParamStore::gather_values() const {
    std::vector<double> flat(static_cast<size_t>(total_));
    int64_t off = 0;
    for (const Tensor& v : values_) {
        for (int64_t i = 0; i < v.numel(); ++i) flat[static_cast<size_t>(off + i)] = v[i];
        off += v.numel();
    }
    return flat;
}

std::vector<double> ParamStore::gather_grads() const {
    std::vector<double> flat(static_cast<size_t>(total_));
    int64_t off = 0;
    for (const Tensor& g : grads_) {
        for (int64_t i = 0; i < g.numel(); ++i) flat[static_cast<size_t>(off + i)] = g[i];
        off += g.numel();
    }
    return flat;
}

void ParamStore::scatter_values(const std::vector<double>& flat) {
    if (flat.size() != static_cast<size_t>(total_))
        throw DataError("parameter vector size mismatch");
    int64_t off = 0;
    for (Tensor& v : values_) {
        for (int64_t i = 0; i < v.numel(); ++i) v[i] = flat[static_cast<size_t>(off + i)];
        off += v.numel();
    }
}

bool ParamStore::all_finite() const {
    for (const Tensor& v : values_)
        if (!v.all_finite()) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(ParamStore& store, int& block_counter, const std::string& name, int in_channels,
               int out_channels, int kernel)
    : in_ch(in_channels), out_ch(out_channels), ksize(kernel) {
    w_id = store.add(name + ".w", {out_ch, in_ch, ksize, ksize});
    b_id = store.add(name + ".b", {out_ch});
    ws_id = block_counter++;
}

namespace {

// {inC, H, W} -> {inC*k*k, H*W} with zero padding (k-1)/2.
void im2col(const Tensor& x, int ksize, Tensor& cols) {
    const int c_in = x.size(0), h = x.size(1), w = x.size(2);
    const int pad = (ksize - 1) / 2;
    cols = Tensor({c_in * ksize * ksize, h * w});
    for (int ci = 0; ci < c_in; ++ci) {
        for (int dr = 0; dr < ksize; ++dr) {
            for (int dc = 0; dc < ksize; ++dc) {
                const int row = (ci * ksize + dr) * ksize + dc;
                double* dst = cols.data() + static_cast<int64_t>(row) * h * w;
                for (int r = 0; r < h; ++r) {
                    const int sr = r + dr - pad;
                    if (sr < 0 || sr >= h) {
                        for (int c = 0; c < w; ++c) dst[r * w + c] = 0.0;
                        continue;
                    }
                    const double* src = x.data() + (static_cast<int64_t>(ci) * h + sr) * w;
                    for (int c = 0; c < w; ++c) {
                        const int sc = c + dc - pad;
                        dst[r * w + c] = (sc < 0 || sc >= w) ? 0.0 : src[sc];
                    }
                }
            }
        }
    }
}

void col2im_add(const Tensor& dcols, int ksize, Tensor& dx) {
    const int c_in = dx.size(0), h = dx.size(1), w = dx.size(2);
    const int pad = (ksize - 1) / 2;
    for (int ci = 0; ci < c_in; ++ci) {
        for (int dr = 0; dr < ksize; ++dr) {
            for (int dc = 0; dc < ksize; ++dc) {
                const int row = (ci * ksize + dr) * ksize + dc;
                const double* src = dcols.data() + static_cast<int64_t>(row) * h * w;
                for (int r = 0; r < h; ++r) {
                    const int sr = r + dr - pad;
                    if (sr < 0 || sr >= h) continue;
                    double* dst = dx.data() + (static_cast<int64_t>(ci) * h + sr) * w;
                    for (int c = 0; c < w; ++c) {
                        const int sc = c + dc - pad;
                        if (sc >= 0 && sc < w) dst[sc] += src[r * w + c];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor Conv2d::forward(const ParamStore& store, Workspace& ws, const Tensor& x) const {
    if (x.dim() != 3 || x.size(0) != in_ch) throw DataError("conv input shape mismatch");
    const int h = x.size(1), w = x.size(2);
    auto& slot = ws.slot(ws_id);
    slot.assign(1, x);  // keep input; im2col is recomputed in backward

    const Tensor& weight = store.value(w_id);
    const Tensor& bias = store.value(b_id);
    Tensor y({out_ch, h, w});
    MapConst wm(weight.data(), out_ch, in_ch * ksize * ksize);
    MapMat ym(y.data(), out_ch, h * w);
    if (ksize == 1) {
        MapConst xm(x.data(), in_ch, h * w);
        ym.noalias() = wm * xm;
    } else {
        Tensor cols;
        im2col(x, ksize, cols);
        MapConst cm(cols.data(), in_ch * ksize * ksize, h * w);
        ym.noalias() = wm * cm;
    }
    for (int co = 0; co < out_ch; ++co) ym.row(co).array() += bias[co];
    return y;
}

Tensor Conv2d::backward(ParamStore& store, Workspace& ws, const Tensor& dy) const {
    const Tensor& x = ws.slot(ws_id)[0];
    const int h = x.size(1), w = x.size(2);
    const Tensor& weight = store.value(w_id);
    Tensor& dw = store.grad(w_id);
    Tensor& db = store.grad(b_id);

    MapConst dym(dy.data(), out_ch, h * w);
    for (int co = 0; co < out_ch; ++co) db[co] += dym.row(co).sum();

    Tensor dx({in_ch, h, w});
    MapConst wm(weight.data(), out_ch, in_ch * ksize * ksize);
    MapMat dwm(dw.data(), out_ch, in_ch * ksize * ksize);
    if (ksize == 1) {
        MapConst xm(x.data(), in_ch, h * w);
        dwm.noalias() += dym * xm.transpose();
        MapMat dxm(dx.data(), in_ch, h * w);
        dxm.noalias() = wm.transpose() * dym;
    } else {
        Tensor cols;
        im2col(x, ksize, cols);
        MapConst cm(cols.data(), in_ch * ksize * ksize, h * w);
        dwm.noalias() += dym * cm.transpose();
        Tensor dcols({in_ch * ksize * ksize, h * w});
        MapMat dcm(dcols.data(), in_ch * ksize * ksize, h * w);
        dcm.noalias() = wm.transpose() * dym;
        col2im_add(dcols, ksize, dx);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// GroupNorm

GroupNorm::GroupNorm(ParamStore& store, int& block_counter, const std::string& name, int channels,
                     int groups_in)
    : ch(channels), groups(groups_in) {
    if (ch % groups != 0) throw DataError("group count must divide channels: " + name);
    g_id = store.add(name + ".g", {ch});
    b_id = store.add(name + ".b", {ch});
    ws_id = block_counter++;
}

Tensor GroupNorm::forward(const ParamStore& store, Workspace& ws, const Tensor& x) const {
    if (x.size(0) != ch) throw DataError("groupnorm channel mismatch");
    const int h = x.size(1), w = x.size(2);
    const int cg = ch / groups;
    const int64_t m = static_cast<int64_t>(cg) * h * w;
    const Tensor& gamma = store.value(g_id);
    const Tensor& beta = store.value(b_id);

    Tensor xhat({ch, h, w});
    Tensor inv_std({groups});
    for (int g = 0; g < groups; ++g) {
        const double* xs = x.data() + static_cast<int64_t>(g) * m;
        double mean = 0.0;
        for (int64_t i = 0; i < m; ++i) mean += xs[i];
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            const double d = xs[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[g] = istd;
        double* xh = xhat.data() + static_cast<int64_t>(g) * m;
        for (int64_t i = 0; i < m; ++i) xh[i] = (xs[i] - mean) * istd;
    }

    Tensor y({ch, h, w});
    for (int c = 0; c < ch; ++c) {
        const double* xh = xhat.data() + static_cast<int64_t>(c) * h * w;
        double* yp = y.data() + static_cast<int64_t>(c) * h * w;
        for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
            yp[i] = gamma[c] * xh[i] + beta[c];
    }
    auto& slot = ws.slot(ws_id);
    slot.resize(2);
    slot[0] = std::move(xhat);
    slot[1] = std::move(inv_std);
    return y;
}

Tensor GroupNorm::backward(ParamStore& store, Workspace& ws, const Tensor& dy) const {
    auto& slot = ws.slot(ws_id);
    const Tensor& xhat = slot[0];
    const Tensor& inv_std = slot[1];
    const int h = dy.size(1), w = dy.size(2);
    const int cg = ch / groups;
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int64_t m = cg * hw;
    const Tensor& gamma = store.value(g_id);
    Tensor& dgamma = store.grad(g_id);
    Tensor& dbeta = store.grad(b_id);

    Tensor dx({ch, h, w});
    for (int g = 0; g < groups; ++g) {
        double s1 = 0.0, s2 = 0.0;
        for (int c = g * cg; c < (g + 1) * cg; ++c) {
            const double* dyp = dy.data() + c * hw;
            const double* xh = xhat.data() + c * hw;
            double dg = 0.0, db = 0.0;
            for (int64_t i = 0; i < hw; ++i) {
                dg += dyp[i] * xh[i];
                db += dyp[i];
            }
            dgamma[c] += dg;
            dbeta[c] += db;
            s1 += db * gamma[c];
            s2 += dg * gamma[c];
        }
        const double istd = inv_std[g];
        const double inv_m = 1.0 / static_cast<double>(m);
        for (int c = g * cg; c < (g + 1) * cg; ++c) {
            const double* dyp = dy.data() + c * hw;
            const double* xh = xhat.data() + c * hw;
            double* dxp = dx.data() + c * hw;
            const double gm = gamma[c];
            for (int64_t i = 0; i < hw; ++i)
                dxp[i] = istd * (gm * dyp[i] - inv_m * (s1 + xh[i] * s2));
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// SiLU

Tensor SiLU::forward(Workspace& ws, const Tensor& x) const {
    ws.slot(ws_id).assign(1, x);
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        y[i] = x[i] * s;
    }
    return y;
}

Tensor SiLU::backward(Workspace& ws, const Tensor& dy) const {
    const Tensor& x = ws.slot(ws_id)[0];
    Tensor dx(dy.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        dx[i] = dy[i] * s * (1.0 + x[i] * (1.0 - s));
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(ParamStore& store, int& block_counter, const std::string& name, int in, int out)
    : in_dim(in), out_dim(out) {
    w_id = store.add(name + ".w", {out, in});
    b_id = store.add(name + ".b", {out});
    ws_id = block_counter++;
}

Tensor Linear::forward(const ParamStore& store, Workspace& ws, const Tensor& x) const {
    if (x.dim() != 2 || x.size(1) != in_dim) throw DataError("linear input shape mismatch");
    const int n = x.size(0);
    ws.slot(ws_id).assign(1, x);
    const Tensor& weight = store.value(w_id);
    const Tensor& bias = store.value(b_id);
    Tensor y({n, out_dim});
    MapConst xm(x.data(), n, in_dim);
    MapConst wm(weight.data(), out_dim, in_dim);
    MapMat ym(y.data(), n, out_dim);
    ym.noalias() = xm * wm.transpose();
    for (int j = 0; j < out_dim; ++j) ym.col(j).array() += bias[j];
    return y;
}

Tensor Linear::backward(ParamStore& store, Workspace& ws, const Tensor& dy) const {
    const Tensor& x = ws.slot(ws_id)[0];
    const int n = x.size(0);
    const Tensor& weight = store.value(w_id);
    Tensor& dw = store.grad(w_id);
    Tensor& db = store.grad(b_id);
    MapConst dym(dy.data(), n, out_dim);
    MapConst xm(x.data(), n, in_dim);
    MapMat dwm(dw.data(), out_dim, in_dim);
    dwm.noalias() += dym.transpose() * xm;
    for (int j = 0; j < out_dim; ++j) db[j] += dym.col(j).sum();
    Tensor dx({n, in_dim});
    MapMat dxm(dx.data(), n, in_dim);
    MapConst wm(weight.data(), out_dim, in_dim);
    dxm.noalias() = dym * wm;
    return dx;
}

// ---------------------------------------------------------------------------
// Pooling / resampling

Tensor avg_pool2(const Tensor& x) {
    const int ch = x.size(0), h = x.size(1), w = x.size(2);
    Tensor y({ch, h / 2, w / 2});
    for (int c = 0; c < ch; ++c)
        for (int r = 0; r < h / 2; ++r)
            for (int q = 0; q < w / 2; ++q)
                y.at(c, r, q) = 0.25 * (x.at(c, 2 * r, 2 * q) + x.at(c, 2 * r, 2 * q + 1) +
                                        x.at(c, 2 * r + 1, 2 * q) + x.at(c, 2 * r + 1, 2 * q + 1));
    return y;
}

Tensor avg_pool2_backward(const Tensor& dy) {
    const int ch = dy.size(0), h = dy.size(1), w = dy.size(2);
    Tensor dx({ch, 2 * h, 2 * w});
    for (int c = 0; c < ch; ++c)
        for (int r = 0; r < h; ++r)
            for (int q = 0; q < w; ++q) {
                const double v = 0.25 * dy.at(c, r, q);
                dx.at(c, 2 * r, 2 * q) = v;
                dx.at(c, 2 * r, 2 * q + 1) = v;
                dx.at(c, 2 * r + 1, 2 * q) = v;
                dx.at(c, 2 * r + 1, 2 * q + 1) = v;
            }
    return dx;
}

Tensor upsample_nearest2(const Tensor& x) {
    const int ch = x.size(0), h = x.size(1), w = x.size(2);
    Tensor y({ch, 2 * h, 2 * w});
    for (int c = 0; c < ch; ++c)
        for (int r = 0; r < 2 * h; ++r)
            for (int q = 0; q < 2 * w; ++q) y.at(c, r, q) = x.at(c, r / 2, q / 2);
    return y;
}

Tensor upsample_nearest2_backward(const Tensor& dy) {
    const int ch = dy.size(0), h = dy.size(1) / 2, w = dy.size(2) / 2;
    Tensor dx({ch, h, w});
    for (int c = 0; c < ch; ++c)
        for (int r = 0; r < 2 * h; ++r)
            for (int q = 0; q < 2 * w; ++q) dx.at(c, r / 2, q / 2) += dy.at(c, r, q);
    return dx;
}

Tensor avg_pool_to(const Tensor& x, int target) {
    if (x.size(1) < target) throw DataError("cannot pool up");
    Tensor y = x;
    while (y.size(1) > target) y = avg_pool2(y);
    return y;
}

// ---------------------------------------------------------------------------
// Time embedding

TimeEmbedding::TimeEmbedding(ParamStore& store, int& block_counter, const std::string& name,
                             int dim_in)
    : dim(dim_in),
      l1(store, block_counter, name + ".l1", dim_in, dim_in),
      l2(store, block_counter, name + ".l2", dim_in, dim_in),
      act(block_counter) {
    if (dim % 2 != 0) throw DataError("time embedding dim must be even");
}

Tensor TimeEmbedding::sinusoidal(int t, int dim) {
    Tensor e({1, dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        e.at(0, i) = std::sin(t * freq);
        e.at(0, half + i) = std::cos(t * freq);
    }
    return e;
}

Tensor TimeEmbedding::forward(const ParamStore& store, Workspace& ws, int t) const {
    Tensor e = sinusoidal(t, dim);
    e = l1.forward(store, ws, e);
    e = act.forward(ws, e);
    return l2.forward(store, ws, e);
}

void TimeEmbedding::backward(ParamStore& store, Workspace& ws, const Tensor& d_emb) const {
    Tensor d = l2.backward(store, ws, d_emb);
    d = act.backward(ws, d);
    l1.backward(store, ws, d);  // sinusoidal input carries no gradient
}

// ---------------------------------------------------------------------------
// ResBlock

ResBlock::ResBlock(ParamStore& store, int& block_counter, const std::string& name,
                   int in_channels, int out_channels, int time_dim, int groups)
    : in_ch(in_channels),
      out_ch(out_channels),
      n1(store, block_counter, name + ".n1", in_channels, groups),
      n2(store, block_counter, name + ".n2", out_channels, groups),
      a1(block_counter),
      a2(block_counter),
      conv1(store, block_counter, name + ".conv1", in_channels, out_channels, 3),
      conv2(store, block_counter, name + ".conv2", out_channels, out_channels, 3),
      time_proj(store, block_counter, name + ".time", time_dim, out_channels),
      has_skip(in_channels != out_channels) {
    if (has_skip) skip = Conv2d(store, block_counter, name + ".skip", in_channels, out_channels, 1);
    ws_id = block_counter++;
}

Tensor ResBlock::forward(const ParamStore& store, Workspace& ws, const Tensor& x,
                         const Tensor& emb) const {
    Tensor h = conv1.forward(store, ws, a1.forward(ws, n1.forward(store, ws, x)));
    const Tensor tb = time_proj.forward(store, ws, emb);  // {1, out_ch}
    const int64_t hw = static_cast<int64_t>(h.size(1)) * h.size(2);
    for (int c = 0; c < out_ch; ++c) {
        double* hp = h.data() + c * hw;
        const double b = tb[c];
        for (int64_t i = 0; i < hw; ++i) hp[i] += b;
    }
    h = conv2.forward(store, ws, a2.forward(ws, n2.forward(store, ws, h)));
    if (has_skip) {
        h += skip.forward(store, ws, x);
    } else {
        h += x;
    }
    return h;
}

Tensor ResBlock::backward(ParamStore& store, Workspace& ws, const Tensor& dy,
                          Tensor& d_emb) const {
    Tensor dh = n2.backward(store, ws, a2.backward(ws, conv2.backward(store, ws, dy)));
    // time bias cotangent: channel sums of dh
    Tensor dtb({1, out_ch});
    const int64_t hw = static_cast<int64_t>(dh.size(1)) * dh.size(2);
    for (int c = 0; c < out_ch; ++c) {
        const double* p = dh.data() + c * hw;
        double s = 0.0;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
        dtb.at(0, c) = s;
    }
    d_emb += time_proj.backward(store, ws, dtb);
    Tensor dx = n1.backward(store, ws, a1.backward(ws, conv1.backward(store, ws, dh)));
    if (has_skip) {
        dx += skip.backward(store, ws, dy);
    } else {
        dx += dy;
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Attention

Tensor to_tokens(const Tensor& x) {
    const int ch = x.size(0), h = x.size(1), w = x.size(2);
    Tensor t({h * w, ch});
    for (int c = 0; c < ch; ++c)
        for (int i = 0; i < h * w; ++i) t.at(i, c) = x[static_cast<int64_t>(c) * h * w + i];
    return t;
}

Tensor from_tokens(const Tensor& tokens, int r) {
    const int n = tokens.size(0), ch = tokens.size(1);
    Tensor x({ch, r, n / r});
    for (int c = 0; c < ch; ++c)
        for (int i = 0; i < n; ++i) x[static_cast<int64_t>(c) * n + i] = tokens.at(i, c);
    return x;
}

namespace {

// Scaled dot-product attention over per-head column slices.
// A_saved: {heads, n, m} softmax rows, kept for backward.
Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                         Tensor& a_saved) {
    const int n = q.size(0), m = k.size(0), ch = q.size(1);
    const int d = ch / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor out({n, ch});
    a_saved = Tensor({heads, n, m});
    MapConst qm(q.data(), n, ch), km(k.data(), m, ch), vm(v.data(), m, ch);
    MapMat om(out.data(), n, ch);
    for (int hd = 0; hd < heads; ++hd) {
        RowMat s = qm.block(0, hd * d, n, d) * km.block(0, hd * d, m, d).transpose() * scale;
        for (int i = 0; i < n; ++i) {
            double mx = s.row(i).maxCoeff();
            double sum = 0.0;
            for (int j = 0; j < m; ++j) {
                const double e = std::exp(s(i, j) - mx);
                s(i, j) = e;
                sum += e;
            }
            s.row(i) /= sum;
        }
        MapMat am(a_saved.data() + static_cast<int64_t>(hd) * n * m, n, m);
        am = s;
        om.block(0, hd * d, n, d).noalias() = s * vm.block(0, hd * d, m, d);
    }
    return out;
}

void attention_backward(const Tensor& d_out, const Tensor& q, const Tensor& k, const Tensor& v,
                        const Tensor& a_saved, int heads, Tensor& dq, Tensor& dk, Tensor& dv) {
    const int n = q.size(0), m = k.size(0), ch = q.size(1);
    const int d = ch / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    dq = Tensor({n, ch});
    dk = Tensor({m, ch});
    dv = Tensor({m, ch});
    MapConst dom(d_out.data(), n, ch), qm(q.data(), n, ch), km(k.data(), m, ch),
        vm(v.data(), m, ch);
    MapMat dqm(dq.data(), n, ch), dkm(dk.data(), m, ch), dvm(dv.data(), m, ch);
    for (int hd = 0; hd < heads; ++hd) {
        MapConst am(a_saved.data() + static_cast<int64_t>(hd) * n * m, n, m);
        dvm.block(0, hd * d, m, d).noalias() =
            am.transpose() * dom.block(0, hd * d, n, d);
        RowMat da = dom.block(0, hd * d, n, d) * vm.block(0, hd * d, m, d).transpose();
        // softmax backward: dS = A .* (dA - rowsum(dA .* A))
        for (int i = 0; i < n; ++i) {
            const double rs = (da.row(i).array() * am.row(i).array()).sum();
            da.row(i) = am.row(i).array() * (da.row(i).array() - rs);
        }
        dqm.block(0, hd * d, n, d).noalias() = da * km.block(0, hd * d, m, d) * scale;
        dkm.block(0, hd * d, m, d).noalias() =
            da.transpose() * qm.block(0, hd * d, n, d) * scale;
    }
}

}  // namespace

AttentionBlock::AttentionBlock(ParamStore& store, int& block_counter, const std::string& name,
                               int channels, int heads_in, int cond_channels, int groups)
    : ch(channels),
      heads(heads_in),
      cond_ch(cond_channels),
      norm_self(store, block_counter, name + ".ns", channels, groups),
      q_self(store, block_counter, name + ".qs", channels, channels),
      k_self(store, block_counter, name + ".ks", channels, channels),
      v_self(store, block_counter, name + ".vs", channels, channels),
      proj_self(store, block_counter, name + ".ps", channels, channels) {
    if (ch % heads != 0) throw DataError("head count must divide attention width: " + name);
    if (cond_ch > 0) {
        norm_cross = GroupNorm(store, block_counter, name + ".nc", channels, groups);
        q_cross = Linear(store, block_counter, name + ".qc", channels, channels);
        k_cross = Linear(store, block_counter, name + ".kc", cond_channels, channels);
        v_cross = Linear(store, block_counter, name + ".vc", cond_channels, channels);
        proj_cross = Linear(store, block_counter, name + ".pc", channels, channels);
    }
    ws_id = block_counter++;
}

Tensor AttentionBlock::forward(const ParamStore& store, Workspace& ws, const Tensor& x,
                               const Tensor& cond_tokens) const {
    const int r = x.size(1);
    auto& slot = ws.slot(ws_id);
    slot.resize(8);

    const Tensor tokens = to_tokens(norm_self.forward(store, ws, x));
    const Tensor q = q_self.forward(store, ws, tokens);
    const Tensor k = k_self.forward(store, ws, tokens);
    const Tensor v = v_self.forward(store, ws, tokens);
    Tensor a_self;
    const Tensor o = attention_forward(q, k, v, heads, a_self);
    Tensor x1 = x;
    x1 += from_tokens(proj_self.forward(store, ws, o), r);
    slot[0] = q;
    slot[1] = k;
    slot[2] = v;
    slot[3] = std::move(a_self);

    if (cond_ch == 0) return x1;
    if (cond_tokens.dim() != 2 || cond_tokens.size(1) != cond_ch)
        throw DataError("condition tokens shape mismatch");
    const Tensor tokens_c = to_tokens(norm_cross.forward(store, ws, x1));
    const Tensor q2 = q_cross.forward(store, ws, tokens_c);
    const Tensor k2 = k_cross.forward(store, ws, cond_tokens);
    const Tensor v2 = v_cross.forward(store, ws, cond_tokens);
    Tensor a_cross;
    const Tensor o2 = attention_forward(q2, k2, v2, heads, a_cross);
    Tensor x2 = x1;
    x2 += from_tokens(proj_cross.forward(store, ws, o2), r);
    slot[4] = q2;
    slot[5] = k2;
    slot[6] = v2;
    slot[7] = std::move(a_cross);
    return x2;
}

Tensor AttentionBlock::backward(ParamStore& store, Workspace& ws, const Tensor& dy) const {
    const int r = dy.size(1);
    auto& slot = ws.slot(ws_id);

    Tensor d_x1 = dy;
    if (cond_ch > 0) {
        const Tensor d_o2 = proj_cross.backward(store, ws, to_tokens(dy));
        Tensor dq2, dk2, dv2;
        attention_backward(d_o2, slot[4], slot[5], slot[6], slot[7], heads, dq2, dk2, dv2);
        // condition tokens are inputs, not parameters: their cotangents stop here
        k_cross.backward(store, ws, dk2);
        v_cross.backward(store, ws, dv2);
        const Tensor d_tokens_c = q_cross.backward(store, ws, dq2);
        d_x1 += norm_cross.backward(store, ws, from_tokens(d_tokens_c, r));
    }

    const Tensor d_o = proj_self.backward(store, ws, to_tokens(d_x1));
    Tensor dq, dk, dv;
    attention_backward(d_o, slot[0], slot[1], slot[2], slot[3], heads, dq, dk, dv);
    Tensor d_tokens = q_self.backward(store, ws, dq);
    d_tokens += k_self.backward(store, ws, dk);
    d_tokens += v_self.backward(store, ws, dv);
    Tensor dx = norm_self.backward(store, ws, from_tokens(d_tokens, r));
    dx += d_x1;
    return dx;
}

}  // namespace triposer
