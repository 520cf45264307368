#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "wsiqc/nn/graph.hpp"
#include "wsiqc/nn/tensor.hpp"

namespace wsiqc::nn {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

namespace detail {

struct ConvDims {
    int oh = 0, ow = 0, pad = 0, k_cols = 0, m_rows = 0;
};

inline ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int dilation) {
    ConvDims d;
    const int kh = w.n, kw = w.h, cin = w.w;
    if (cin != x.c)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(x.c) +
                                    " != kernel channels " + std::to_string(cin));
    d.pad = dilation * (kh - 1) / 2;
    d.oh = (x.h + 2 * d.pad - dilation * (kh - 1) - 1) / stride + 1;
    d.ow = (x.w + 2 * d.pad - dilation * (kw - 1) - 1) / stride + 1;
    d.k_cols = kh * kw * cin;
    d.m_rows = x.n * d.oh * d.ow;
    return d;
}

// col(m, k) with m = ((n*OH + oy)*OW + ox), k = ((ky*KW + kx)*CIN + ci).
inline std::vector<double> im2col(const Tensor& x, int kh, int kw, int stride,
                                  int dilation, const ConvDims& d) {
    std::vector<double> col(static_cast<std::size_t>(d.m_rows) * d.k_cols, 0.0);
    const int cin = x.c;
#pragma omp parallel for collapse(2) schedule(static)
    for (int in = 0; in < x.n; ++in) {
        for (int oy = 0; oy < d.oh; ++oy) {
            for (int ox = 0; ox < d.ow; ++ox) {
                double* row = col.data() +
                              (static_cast<std::size_t>(in) * d.oh * d.ow +
                               static_cast<std::size_t>(oy) * d.ow + ox) *
                                  d.k_cols;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride - d.pad + ky * dilation;
                    if (iy < 0 || iy >= x.h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride - d.pad + kx * dilation;
                        if (ix < 0 || ix >= x.w) continue;
                        const double* src =
                            &x.v[((static_cast<std::size_t>(in) * x.h + iy) * x.w + ix) * cin];
                        double* dst = row + (ky * kw + kx) * cin;
                        for (int ci = 0; ci < cin; ++ci) dst[ci] = src[ci];
                    }
                }
            }
        }
    }
    return col;
}

// Gather form of col2im so parallel writes stay disjoint.
inline void col2im_accumulate(const std::vector<double>& dcol, Tensor& dx, int kh, int kw,
                              int stride, int dilation, const ConvDims& d) {
    const int cin = dx.c;
#pragma omp parallel for collapse(2) schedule(static)
    for (int in = 0; in < dx.n; ++in) {
        for (int iy = 0; iy < dx.h; ++iy) {
            for (int ix = 0; ix < dx.w; ++ix) {
                double* dst =
                    &dx.v[((static_cast<std::size_t>(in) * dx.h + iy) * dx.w + ix) * cin];
                for (int ky = 0; ky < kh; ++ky) {
                    const int num_y = iy + d.pad - ky * dilation;
                    if (num_y < 0 || num_y % stride) continue;
                    const int oy = num_y / stride;
                    if (oy >= d.oh) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int num_x = ix + d.pad - kx * dilation;
                        if (num_x < 0 || num_x % stride) continue;
                        const int ox = num_x / stride;
                        if (ox >= d.ow) continue;
                        const double* src = dcol.data() +
                                            (static_cast<std::size_t>(in) * d.oh * d.ow +
                                             static_cast<std::size_t>(oy) * d.ow + ox) *
                                                d.k_cols +
                                            (ky * kw + kx) * cin;
                        for (int ci = 0; ci < cin; ++ci) dst[ci] += src[ci];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Same-padded 2-D convolution. Kernel tensor is (KH, KW, CIN, COUT), bias
// (1,1,1,COUT). Odd kernels only; even input sides halve exactly at stride 2.
// The im2col buffer is recomputed in backward instead of cached: a deep
// tape over 64x64 tiles would otherwise hold hundreds of MB.
inline Var conv2d(Tape& tape, const Var& x, const Var& w, const Var& b, int stride = 1,
                  int dilation = 1) {
    const Tensor& xt = x.value();
    const Tensor& wt = w.value();
    const int kh = wt.n, kw = wt.h, cout = wt.c;
    const auto d = detail::conv_dims(xt, wt, stride, dilation);

    Tensor out(xt.n, d.oh, d.ow, cout);
    {
        const auto col = detail::im2col(xt, kh, kw, stride, dilation, d);
        CMapRM colm(col.data(), d.m_rows, d.k_cols);
        CMapRM wm(wt.v.data(), d.k_cols, cout);
        MapRM om(out.v.data(), d.m_rows, cout);
        om.noalias() = colm * wm;
        om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().v.data(), cout);
    }

    Var y = tape.emit(std::move(out), x.needs_grad() || w.needs_grad() || b.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        auto wn = w.node;
        auto bn = b.node;
        y.node->backward_fn = [self, xn, wn, bn, stride, dilation, kh, kw, cout, d]() {
            CMapRM gy(self->grad.v.data(), d.m_rows, cout);
            if (wn->needs_grad) {
                const auto col =
                    detail::im2col(xn->value, kh, kw, stride, dilation, d);
                CMapRM colm(col.data(), d.m_rows, d.k_cols);
                wn->ensure_grad();
                MapRM gw(wn->grad.v.data(), d.k_cols, cout);
                gw.noalias() += colm.transpose() * gy;
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                Eigen::Map<Eigen::RowVectorXd> gb(bn->grad.v.data(), cout);
                gb += gy.colwise().sum();
            }
            if (xn->needs_grad) {
                CMapRM wm(wn->value.v.data(), d.k_cols, cout);
                std::vector<double> dcol(static_cast<std::size_t>(d.m_rows) * d.k_cols);
                MapRM dcolm(dcol.data(), d.m_rows, d.k_cols);
                dcolm.noalias() = gy * wm.transpose();
                xn->ensure_grad();
                detail::col2im_accumulate(dcol, xn->grad, kh, kw, stride, dilation, d);
            }
        };
    }
    return y;
}

// 2x2 max pooling, stride 2. Requires even spatial dims.
inline Var maxpool2(Tape& tape, const Var& x) {
    const Tensor& xt = x.value();
    if (xt.h % 2 || xt.w % 2)
        throw std::invalid_argument("maxpool2: spatial dims must be even, got " +
                                    xt.shape_str());
    const int oh = xt.h / 2, ow = xt.w / 2;
    Tensor out(xt.n, oh, ow, xt.c);
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
    for (int in = 0; in < xt.n; ++in) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                for (int ci = 0; ci < xt.c; ++ci) {
                    // seed with the first cell so NaN propagates
                    std::size_t first = ((static_cast<std::size_t>(in) * xt.h + 2 * oy) * xt.w +
                                         2 * ox) *
                                            xt.c +
                                        ci;
                    double best = xt.v[first];
                    std::uint32_t best_idx = static_cast<std::uint32_t>(first);
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx =
                                ((static_cast<std::size_t>(in) * xt.h + 2 * oy + dy) * xt.w +
                                 2 * ox + dx) *
                                    xt.c +
                                ci;
                            if (xt.v[idx] > best) {
                                best = xt.v[idx];
                                best_idx = static_cast<std::uint32_t>(idx);
                            }
                        }
                    }
                    const std::size_t oidx =
                        ((static_cast<std::size_t>(in) * oh + oy) * ow + ox) * xt.c + ci;
                    out.v[oidx] = best;
                    (*argmax)[oidx] = best_idx;
                }
            }
        }
    }
    Var y = tape.emit(std::move(out), x.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        y.node->backward_fn = [self, xn, argmax]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self->grad.v.size(); ++i)
                xn->grad.v[(*argmax)[i]] += self->grad.v[i];
        };
    }
    return y;
}

// Nearest-neighbor 2x upsampling.
inline Var upsample2(Tape& tape, const Var& x) {
    const Tensor& xt = x.value();
    Tensor out(xt.n, xt.h * 2, xt.w * 2, xt.c);
    for (int in = 0; in < xt.n; ++in)
        for (int y = 0; y < out.h; ++y)
            for (int xcol = 0; xcol < out.w; ++xcol)
                for (int ci = 0; ci < xt.c; ++ci)
                    out.at(in, y, xcol, ci) = xt.at(in, y / 2, xcol / 2, ci);
    Var y = tape.emit(std::move(out), x.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        y.node->backward_fn = [self, xn]() {
            xn->ensure_grad();
            const Tensor& g = self->grad;
            for (int in = 0; in < g.n; ++in)
                for (int yy = 0; yy < g.h; ++yy)
                    for (int xx = 0; xx < g.w; ++xx)
                        for (int ci = 0; ci < g.c; ++ci)
                            xn->grad.at(in, yy / 2, xx / 2, ci) += g.at(in, yy, xx, ci);
        };
    }
    return y;
}

inline Var relu(Tape& tape, const Var& x) {
    Tensor out = x.value();
    for (double& v : out.v) v = v > 0.0 ? v : 0.0;
    Var y = tape.emit(std::move(out), x.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        y.node->backward_fn = [self, xn]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self->grad.v.size(); ++i)
                if (xn->value.v[i] > 0.0) xn->grad.v[i] += self->grad.v[i];
        };
    }
    return y;
}

inline Var sigmoid(Tape& tape, const Var& x) {
    Tensor out = x.value();
    for (double& v : out.v) v = 1.0 / (1.0 + std::exp(-v));
    Var y = tape.emit(std::move(out), x.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        y.node->backward_fn = [self, xn]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self->grad.v.size(); ++i) {
                const double s = self->value.v[i];
                xn->grad.v[i] += self->grad.v[i] * s * (1.0 - s);
            }
        };
    }
    return y;
}

inline Var add(Tape& tape, const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("add: shape mismatch " + a.value().shape_str() + " vs " +
                                    b.value().shape_str());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.value().v[i];
    Var y = tape.emit(std::move(out), a.needs_grad() || b.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto an = a.node;
        auto bn = b.node;
        y.node->backward_fn = [self, an, bn]() {
            if (an->needs_grad) accumulate_grad(an, self->grad);
            if (bn->needs_grad) accumulate_grad(bn, self->grad);
        };
    }
    return y;
}

inline Var mul(Tape& tape, const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("mul: shape mismatch " + a.value().shape_str() + " vs " +
                                    b.value().shape_str());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.value().v[i];
    Var y = tape.emit(std::move(out), a.needs_grad() || b.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto an = a.node;
        auto bn = b.node;
        y.node->backward_fn = [self, an, bn]() {
            if (an->needs_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self->grad.v.size(); ++i)
                    an->grad.v[i] += self->grad.v[i] * bn->value.v[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self->grad.v.size(); ++i)
                    bn->grad.v[i] += self->grad.v[i] * an->value.v[i];
            }
        };
    }
    return y;
}

// x (N,H,W,C) scaled by a single-channel map m (N,H,W,1).
inline Var mul_map(Tape& tape, const Var& x, const Var& m) {
    const Tensor& xt = x.value();
    const Tensor& mt = m.value();
    if (mt.n != xt.n || mt.h != xt.h || mt.w != xt.w || mt.c != 1)
        throw std::invalid_argument("mul_map: map must be (N,H,W,1) matching x, got " +
                                    mt.shape_str() + " for " + xt.shape_str());
    Tensor out = xt;
    const std::size_t pixels = static_cast<std::size_t>(xt.n) * xt.h * xt.w;
    for (std::size_t p = 0; p < pixels; ++p) {
        const double s = mt.v[p];
        for (int ci = 0; ci < xt.c; ++ci) out.v[p * xt.c + ci] *= s;
    }
    Var y = tape.emit(std::move(out), x.needs_grad() || m.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        auto mn = m.node;
        y.node->backward_fn = [self, xn, mn]() {
            const Tensor& g = self->grad;
            const int c = xn->value.c;
            const std::size_t pixels = static_cast<std::size_t>(g.n) * g.h * g.w;
            if (xn->needs_grad) {
                xn->ensure_grad();
                for (std::size_t p = 0; p < pixels; ++p) {
                    const double s = mn->value.v[p];
                    for (int ci = 0; ci < c; ++ci)
                        xn->grad.v[p * c + ci] += g.v[p * c + ci] * s;
                }
            }
            if (mn->needs_grad) {
                mn->ensure_grad();
                for (std::size_t p = 0; p < pixels; ++p) {
                    double acc = 0.0;
                    for (int ci = 0; ci < c; ++ci)
                        acc += g.v[p * c + ci] * xn->value.v[p * c + ci];
                    mn->grad.v[p] += acc;
                }
            }
        };
    }
    return y;
}

// x (N,H,W,C) scaled per channel by s (N,1,1,C); the squeeze-excite path.
inline Var mul_chan(Tape& tape, const Var& x, const Var& s) {
    const Tensor& xt = x.value();
    const Tensor& st = s.value();
    if (st.n != xt.n || st.h != 1 || st.w != 1 || st.c != xt.c)
        throw std::invalid_argument("mul_chan: scale must be (N,1,1,C) matching x, got " +
                                    st.shape_str() + " for " + xt.shape_str());
    Tensor out = xt;
    const std::size_t hw = static_cast<std::size_t>(xt.h) * xt.w;
    for (int in = 0; in < xt.n; ++in) {
        const double* sv = &st.v[static_cast<std::size_t>(in) * xt.c];
        double* ov = &out.v[static_cast<std::size_t>(in) * hw * xt.c];
        for (std::size_t p = 0; p < hw; ++p)
            for (int ci = 0; ci < xt.c; ++ci) ov[p * xt.c + ci] *= sv[ci];
    }
    Var y = tape.emit(std::move(out), x.needs_grad() || s.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        auto sn = s.node;
        y.node->backward_fn = [self, xn, sn]() {
            const Tensor& g = self->grad;
            const int c = g.c;
            const std::size_t hw = static_cast<std::size_t>(g.h) * g.w;
            for (int in = 0; in < g.n; ++in) {
                const std::size_t base = static_cast<std::size_t>(in) * hw * c;
                const double* sv = &sn->value.v[static_cast<std::size_t>(in) * c];
                if (xn->needs_grad) {
                    xn->ensure_grad();
                    for (std::size_t p = 0; p < hw; ++p)
                        for (int ci = 0; ci < c; ++ci)
                            xn->grad.v[base + p * c + ci] += g.v[base + p * c + ci] * sv[ci];
                }
                if (sn->needs_grad) {
                    sn->ensure_grad();
                    for (int ci = 0; ci < c; ++ci) {
                        double acc = 0.0;
                        for (std::size_t p = 0; p < hw; ++p)
                            acc += g.v[base + p * c + ci] * xn->value.v[base + p * c + ci];
                        sn->grad.v[static_cast<std::size_t>(in) * c + ci] += acc;
                    }
                }
            }
        };
    }
    return y;
}

inline Var concat_c(Tape& tape, const Var& a, const Var& b) {
    const Tensor& at = a.value();
    const Tensor& bt = b.value();
    if (at.n != bt.n || at.h != bt.h || at.w != bt.w)
        throw std::invalid_argument("concat_c: spatial mismatch " + at.shape_str() + " vs " +
                                    bt.shape_str());
    Tensor out(at.n, at.h, at.w, at.c + bt.c);
    const std::size_t pixels = static_cast<std::size_t>(at.n) * at.h * at.w;
    for (std::size_t p = 0; p < pixels; ++p) {
        std::copy_n(&at.v[p * at.c], at.c, &out.v[p * out.c]);
        std::copy_n(&bt.v[p * bt.c], bt.c, &out.v[p * out.c + at.c]);
    }
    Var y = tape.emit(std::move(out), a.needs_grad() || b.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto an = a.node;
        auto bn = b.node;
        y.node->backward_fn = [self, an, bn]() {
            const Tensor& g = self->grad;
            const int ca = an->value.c, cb = bn->value.c;
            const std::size_t pixels = static_cast<std::size_t>(g.n) * g.h * g.w;
            if (an->needs_grad) {
                an->ensure_grad();
                for (std::size_t p = 0; p < pixels; ++p)
                    for (int ci = 0; ci < ca; ++ci)
                        an->grad.v[p * ca + ci] += g.v[p * g.c + ci];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (std::size_t p = 0; p < pixels; ++p)
                    for (int ci = 0; ci < cb; ++ci)
                        bn->grad.v[p * cb + ci] += g.v[p * g.c + ca + ci];
            }
        };
    }
    return y;
}

inline Var global_avg_pool(Tape& tape, const Var& x) {
    const Tensor& xt = x.value();
    Tensor out(xt.n, 1, 1, xt.c);
    const std::size_t hw = static_cast<std::size_t>(xt.h) * xt.w;
    for (int in = 0; in < xt.n; ++in) {
        for (int ci = 0; ci < xt.c; ++ci) {
            double acc = 0.0;
            for (std::size_t p = 0; p < hw; ++p)
                acc += xt.v[(static_cast<std::size_t>(in) * hw + p) * xt.c + ci];
            out.at(in, 0, 0, ci) = acc / static_cast<double>(hw);
        }
    }
    Var y = tape.emit(std::move(out), x.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        y.node->backward_fn = [self, xn]() {
            xn->ensure_grad();
            const Tensor& g = self->grad;
            const std::size_t hw = static_cast<std::size_t>(xn->value.h) * xn->value.w;
            const double inv = 1.0 / static_cast<double>(hw);
            for (int in = 0; in < g.n; ++in)
                for (int ci = 0; ci < g.c; ++ci) {
                    const double gv = g.at(in, 0, 0, ci) * inv;
                    for (std::size_t p = 0; p < hw; ++p)
                        xn->grad.v[(static_cast<std::size_t>(in) * hw + p) * g.c + ci] += gv;
                }
        };
    }
    return y;
}

// Average pooling onto a fixed output grid (torch-style adaptive bins);
// lets one classifier topology accept both 224 and 331 pixel inputs.
inline Var adaptive_avg_pool(Tape& tape, const Var& x, int oh, int ow) {
    const Tensor& xt = x.value();
    Tensor out(xt.n, oh, ow, xt.c);
    auto bin = [](int i, int out_sz, int in_sz) {
        const int lo = (i * in_sz) / out_sz;
        const int hi = ((i + 1) * in_sz + out_sz - 1) / out_sz;
        return std::pair<int, int>(lo, hi);
    };
    for (int in = 0; in < xt.n; ++in)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const auto [y0, y1] = bin(oy, oh, xt.h);
                const auto [x0, x1] = bin(ox, ow, xt.w);
                const double inv = 1.0 / ((y1 - y0) * (x1 - x0));
                for (int ci = 0; ci < xt.c; ++ci) {
                    double acc = 0.0;
                    for (int yy = y0; yy < y1; ++yy)
                        for (int xx = x0; xx < x1; ++xx) acc += xt.at(in, yy, xx, ci);
                    out.at(in, oy, ox, ci) = acc * inv;
                }
            }
    Var y = tape.emit(std::move(out), x.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        y.node->backward_fn = [self, xn, oh, ow, bin]() {
            xn->ensure_grad();
            const Tensor& g = self->grad;
            const Tensor& xv = xn->value;
            for (int in = 0; in < g.n; ++in)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const auto [y0, y1] = bin(oy, oh, xv.h);
                        const auto [x0, x1] = bin(ox, ow, xv.w);
                        const double inv = 1.0 / ((y1 - y0) * (x1 - x0));
                        for (int ci = 0; ci < g.c; ++ci) {
                            const double gv = g.at(in, oy, ox, ci) * inv;
                            for (int yy = y0; yy < y1; ++yy)
                                for (int xx = x0; xx < x1; ++xx)
                                    xn->grad.at(in, yy, xx, ci) += gv;
                        }
                    }
        };
    }
    return y;
}

// Softmax over the channel axis of (N,1,1,C).
inline Var softmax_c(Tape& tape, const Var& x) {
    const Tensor& xt = x.value();
    if (xt.h != 1 || xt.w != 1)
        throw std::invalid_argument("softmax_c expects (N,1,1,C), got " + xt.shape_str());
    Tensor out = xt;
    for (int in = 0; in < xt.n; ++in) {
        double* row = &out.v[static_cast<std::size_t>(in) * xt.c];
        const double mx = *std::max_element(row, row + xt.c);
        double sum = 0.0;
        for (int ci = 0; ci < xt.c; ++ci) {
            row[ci] = std::exp(row[ci] - mx);
            sum += row[ci];
        }
        for (int ci = 0; ci < xt.c; ++ci) row[ci] /= sum;
    }
    Var y = tape.emit(std::move(out), x.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        y.node->backward_fn = [self, xn]() {
            xn->ensure_grad();
            const Tensor& g = self->grad;
            const int c = g.c;
            for (int in = 0; in < g.n; ++in) {
                const double* yv = &self->value.v[static_cast<std::size_t>(in) * c];
                const double* gv = &g.v[static_cast<std::size_t>(in) * c];
                double dot = 0.0;
                for (int ci = 0; ci < c; ++ci) dot += gv[ci] * yv[ci];
                for (int ci = 0; ci < c; ++ci)
                    xn->grad.v[static_cast<std::size_t>(in) * c + ci] +=
                        yv[ci] * (gv[ci] - dot);
            }
        };
    }
    return y;
}

// Batch normalization over (N,H,W) per channel. In training mode the batch
// statistics normalize and running stats are updated in place; in eval
// mode the running stats normalize. gamma/beta are (1,1,1,C).
inline Var batch_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta,
                      Tensor& running_mean, Tensor& running_var, bool training,
                      double momentum = 0.9, double eps = 1e-5) {
    const Tensor& xt = x.value();
    const int c = xt.c;
    const std::size_t m = static_cast<std::size_t>(xt.n) * xt.h * xt.w;

    auto mean = std::make_shared<std::vector<double>>(c, 0.0);
    auto inv_std = std::make_shared<std::vector<double>>(c, 0.0);
    if (training) {
        std::vector<double> var(c, 0.0);
        for (std::size_t p = 0; p < m; ++p)
            for (int ci = 0; ci < c; ++ci) (*mean)[ci] += xt.v[p * c + ci];
        for (int ci = 0; ci < c; ++ci) (*mean)[ci] /= static_cast<double>(m);
        for (std::size_t p = 0; p < m; ++p)
            for (int ci = 0; ci < c; ++ci) {
                const double d = xt.v[p * c + ci] - (*mean)[ci];
                var[ci] += d * d;
            }
        for (int ci = 0; ci < c; ++ci) {
            var[ci] /= static_cast<double>(m);
            (*inv_std)[ci] = 1.0 / std::sqrt(var[ci] + eps);
            running_mean.v[ci] = momentum * running_mean.v[ci] + (1.0 - momentum) * (*mean)[ci];
            running_var.v[ci] = momentum * running_var.v[ci] + (1.0 - momentum) * var[ci];
        }
    } else {
        for (int ci = 0; ci < c; ++ci) {
            (*mean)[ci] = running_mean.v[ci];
            (*inv_std)[ci] = 1.0 / std::sqrt(running_var.v[ci] + eps);
        }
    }

    Tensor out = xt;
    const double* gv = gamma.value().v.data();
    const double* bv = beta.value().v.data();
    for (std::size_t p = 0; p < m; ++p)
        for (int ci = 0; ci < c; ++ci)
            out.v[p * c + ci] =
                gv[ci] * (out.v[p * c + ci] - (*mean)[ci]) * (*inv_std)[ci] + bv[ci];

    Var y = tape.emit(std::move(out),
                      x.needs_grad() || gamma.needs_grad() || beta.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        auto gn = gamma.node;
        auto bn = beta.node;
        y.node->backward_fn = [self, xn, gn, bn, mean, inv_std, training, c, m]() {
            const Tensor& g = self->grad;
            // dgamma/dbeta from xhat
            std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
            for (std::size_t p = 0; p < m; ++p)
                for (int ci = 0; ci < c; ++ci) {
                    const double xhat =
                        (xn->value.v[p * c + ci] - (*mean)[ci]) * (*inv_std)[ci];
                    dgamma[ci] += g.v[p * c + ci] * xhat;
                    dbeta[ci] += g.v[p * c + ci];
                }
            if (gn->needs_grad) {
                gn->ensure_grad();
                for (int ci = 0; ci < c; ++ci) gn->grad.v[ci] += dgamma[ci];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (int ci = 0; ci < c; ++ci) bn->grad.v[ci] += dbeta[ci];
            }
            if (xn->needs_grad) {
                xn->ensure_grad();
                const double* gam = gn->value.v.data();
                if (training) {
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (std::size_t p = 0; p < m; ++p)
                        for (int ci = 0; ci < c; ++ci) {
                            const double xhat =
                                (xn->value.v[p * c + ci] - (*mean)[ci]) * (*inv_std)[ci];
                            xn->grad.v[p * c + ci] +=
                                gam[ci] * (*inv_std)[ci] *
                                (g.v[p * c + ci] - dbeta[ci] * inv_m -
                                 xhat * dgamma[ci] * inv_m);
                        }
                } else {
                    for (std::size_t p = 0; p < m; ++p)
                        for (int ci = 0; ci < c; ++ci)
                            xn->grad.v[p * c + ci] +=
                                g.v[p * c + ci] * gam[ci] * (*inv_std)[ci];
                }
            }
        };
    }
    return y;
}

inline Var reduce_sum(Tape& tape, const Var& x) {
    Tensor out(1, 1, 1, 1);
    for (double v : x.value().v) out.v[0] += v;
    Var y = tape.emit(std::move(out), x.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto xn = x.node;
        y.node->backward_fn = [self, xn]() {
            xn->ensure_grad();
            const double g = self->grad.v[0];
            for (double& v : xn->grad.v) v += g;
        };
    }
    return y;
}

// ---- losses ---------------------------------------------------------------

// Negative smoothed dice over the whole batch.
inline Var dice_loss_op(Tape& tape, const Var& pred, const Tensor& target,
                        double smooth = 1.0) {
    const Tensor& p = pred.value();
    if (!p.same_shape(target))
        throw std::invalid_argument("dice_loss: target shape " + target.shape_str() +
                                    " != pred " + p.shape_str());
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (std::size_t i = 0; i < p.v.size(); ++i) {
        inter += p.v[i] * target.v[i];
        psum += p.v[i];
        tsum += target.v[i];
    }
    const double denom = psum + tsum + smooth;
    const double dice = (2.0 * inter + smooth) / denom;
    Tensor out(1, 1, 1, 1);
    out.v[0] = -dice;
    Var y = tape.emit(std::move(out), pred.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto pn = pred.node;
        auto tgt = std::make_shared<Tensor>(target);
        const double num = 2.0 * inter + smooth;
        y.node->backward_fn = [self, pn, tgt, denom, num]() {
            pn->ensure_grad();
            const double gscale = self->grad.v[0];
            const double inv_d = 1.0 / denom;
            const double inv_d2 = num * inv_d * inv_d;
            for (std::size_t i = 0; i < pn->value.v.size(); ++i) {
                const double ddice_dp = 2.0 * tgt->v[i] * inv_d - inv_d2;
                pn->grad.v[i] += gscale * (-ddice_dp);
            }
        };
    }
    return y;
}

// Mean binary cross entropy with probability clipping at `clip`.
inline Var bce_loss_op(Tape& tape, const Var& pred, const Tensor& target,
                       double clip = 1e-7) {
    const Tensor& p = pred.value();
    if (!p.same_shape(target))
        throw std::invalid_argument("bce_loss: target shape " + target.shape_str() +
                                    " != pred " + p.shape_str());
    const double count = static_cast<double>(p.v.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p.v.size(); ++i) {
        const double pc = std::clamp(p.v[i], clip, 1.0 - clip);
        acc -= target.v[i] * std::log(pc) + (1.0 - target.v[i]) * std::log(1.0 - pc);
    }
    Tensor out(1, 1, 1, 1);
    out.v[0] = acc / count;
    Var y = tape.emit(std::move(out), pred.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto pn = pred.node;
        auto tgt = std::make_shared<Tensor>(target);
        y.node->backward_fn = [self, pn, tgt, clip, count]() {
            pn->ensure_grad();
            const double gscale = self->grad.v[0] / count;
            for (std::size_t i = 0; i < pn->value.v.size(); ++i) {
                const double pv = pn->value.v[i];
                if (pv <= clip || pv >= 1.0 - clip) continue;  // clipped: zero slope
                pn->grad.v[i] += gscale * (pv - tgt->v[i]) / (pv * (1.0 - pv));
            }
        };
    }
    return y;
}

// Mean categorical cross entropy; probs is (N,1,1,C), labels class indices.
inline Var cce_loss_op(Tape& tape, const Var& probs, const std::vector<int>& labels,
                       double clip = 1e-7) {
    const Tensor& p = probs.value();
    if (p.n != static_cast<int>(labels.size()))
        throw std::invalid_argument("cce_loss: batch/labels size mismatch");
    const int c = p.c;
    double acc = 0.0;
    for (int in = 0; in < p.n; ++in) {
        const double pc =
            std::clamp(p.v[static_cast<std::size_t>(in) * c + labels[in]], clip, 1.0);
        acc -= std::log(pc);
    }
    Tensor out(1, 1, 1, 1);
    out.v[0] = acc / p.n;
    Var y = tape.emit(std::move(out), probs.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto pn = probs.node;
        auto lbl = std::make_shared<std::vector<int>>(labels);
        y.node->backward_fn = [self, pn, lbl, clip, c]() {
            pn->ensure_grad();
            const double gscale = self->grad.v[0] / pn->value.n;
            for (int in = 0; in < pn->value.n; ++in) {
                const std::size_t idx = static_cast<std::size_t>(in) * c + (*lbl)[in];
                const double pv = pn->value.v[idx];
                if (pv <= clip) continue;
                pn->grad.v[idx] += gscale * (-1.0 / pv);
            }
        };
    }
    return y;
}

// Mean KL divergence against one-hot targets, both sides clipped at `clip`
// to keep the logs finite.
inline Var kld_loss_op(Tape& tape, const Var& probs, const std::vector<int>& labels,
                       double clip = 1e-7) {
    const Tensor& p = probs.value();
    if (p.n != static_cast<int>(labels.size()))
        throw std::invalid_argument("kld_loss: batch/labels size mismatch");
    const int c = p.c;
    double acc = 0.0;
    for (int in = 0; in < p.n; ++in) {
        for (int ci = 0; ci < c; ++ci) {
            const double t = std::clamp(ci == labels[in] ? 1.0 : 0.0, clip, 1.0);
            const double pc = std::clamp(p.v[static_cast<std::size_t>(in) * c + ci], clip, 1.0);
            acc += t * (std::log(t) - std::log(pc));
        }
    }
    Tensor out(1, 1, 1, 1);
    out.v[0] = acc / p.n;
    Var y = tape.emit(std::move(out), probs.needs_grad());
    if (y.needs_grad()) {
        Node* self = y.node.get();
        auto pn = probs.node;
        auto lbl = std::make_shared<std::vector<int>>(labels);
        y.node->backward_fn = [self, pn, lbl, clip, c]() {
            pn->ensure_grad();
            const double gscale = self->grad.v[0] / pn->value.n;
            for (int in = 0; in < pn->value.n; ++in) {
                for (int ci = 0; ci < c; ++ci) {
                    const std::size_t idx = static_cast<std::size_t>(in) * c + ci;
                    const double t = std::clamp(ci == (*lbl)[in] ? 1.0 : 0.0, clip, 1.0);
                    const double pv = pn->value.v[idx];
                    if (pv <= clip || pv > 1.0) continue;
                    pn->grad.v[idx] += gscale * (-t / pv);
                }
            }
        };
    }
    return y;
}

}  // namespace wsiqc::nn
