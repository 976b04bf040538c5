// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// Neural building blocks on top of the tensor tape: 2-D convolution with
// circular padding along the azimuth axis, nearest-neighbour upsampling,
// instance normalization, linear layers, and sinusoidal timestep embeddings.
// Convolution and normalization are fused tape ops with handwritten
// backward passes; building them from scalar ops would make the tape
// unusably large for range-map sized inputs.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "squall/params.hpp"
#include "squall/tensor.hpp"

namespace squall {

// Convolution over a (C_in, H, W) map producing (C_out, H_out, W_out).
// Height is zero padded, width is circularly padded (the azimuth axis of a
// range map wraps around). Padding is fixed at k/2 per side so stride 1
// preserves the spatial size and stride 2 halves it for even inputs.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     int stride_h = 1, int stride_w = 1) {
    if (x.shape().size() != 3 || w.shape().size() != 4)
        throw std::invalid_argument("conv2d: expected x rank 3 and w rank 4");
    const std::int64_t ci = x.shape()[0], h = x.shape()[1], wid = x.shape()[2];
    const std::int64_t co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != ci)
        throw std::invalid_argument("conv2d: channel mismatch, x has " +
                                    std::to_string(ci) + ", w expects " +
                                    std::to_string(w.shape()[1]));
    if (b.shape() != Shape{co})
        throw std::invalid_argument("conv2d: bias shape mismatch");
    if (stride_h < 1 || stride_w < 1)
        throw std::invalid_argument("conv2d: stride must be positive");
    const std::int64_t ph = kh / 2, pw = kw / 2;
    const std::int64_t hp = h + 2 * ph, wp = wid + 2 * pw;
    const std::int64_t ho = (hp - kh) / stride_h + 1;
    const std::int64_t wo = (wp - kw) / stride_w + 1;

    // padded input buffer, reused by the backward closure
    auto pad = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(ci * hp * wp), 0.0);
    {
        const auto& xv = x.data();
        for (std::int64_t c = 0; c < ci; ++c)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < wp; ++j) {
                    const std::int64_t src = ((j - pw) % wid + wid) % wid;
                    (*pad)[(c * hp + i + ph) * wp + j] =
                        xv[(c * h + i) * wid + src];
                }
    }

    const bool rg = detail::track({x, w, b});
    auto node = detail::make_node({co, ho, wo},
                                  static_cast<std::size_t>(co * ho * wo), rg);
    auto& ov = node->v;
    const auto& wv = w.data();
    const auto& bv = b.data();
    for (std::int64_t o = 0; o < co; ++o)
        for (std::int64_t c = 0; c < ci; ++c)
            for (std::int64_t u = 0; u < kh; ++u)
                for (std::int64_t v = 0; v < kw; ++v) {
                    const double wk = wv[((o * ci + c) * kh + u) * kw + v];
                    if (wk == 0.0) continue;
                    for (std::int64_t oh = 0; oh < ho; ++oh) {
                        const double* prow =
                            pad->data() + (c * hp + oh * stride_h + u) * wp + v;
                        double* orow = ov.data() + (o * ho + oh) * wo;
                        for (std::int64_t ow = 0; ow < wo; ++ow)
                            orow[ow] += wk * prow[ow * stride_w];
                    }
                }
    for (std::int64_t o = 0; o < co; ++o)
        for (std::int64_t i = 0; i < ho * wo; ++i) ov[o * ho * wo + i] += bv[o];

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    detail::attach(node, {x, w, b}, [=](TensorNode& self) {
        const auto& g = self.g;
        if (bn->requires_grad) {
            auto& gb = bn->grad_buf();
            for (std::int64_t o = 0; o < co; ++o)
                for (std::int64_t i = 0; i < ho * wo; ++i)
                    gb[o] += g[o * ho * wo + i];
        }
        auto* gw = wn->requires_grad ? &wn->grad_buf() : nullptr;
        std::vector<double> dpad;
        if (xn->requires_grad)
            dpad.assign(static_cast<std::size_t>(ci * hp * wp), 0.0);
        for (std::int64_t o = 0; o < co; ++o)
            for (std::int64_t c = 0; c < ci; ++c)
                for (std::int64_t u = 0; u < kh; ++u)
                    for (std::int64_t v = 0; v < kw; ++v) {
                        const std::size_t widx =
                            static_cast<std::size_t>(((o * ci + c) * kh + u) *
                                                         kw +
                                                     v);
                        double dw = 0.0;
                        const double wk = wn->v[widx];
                        for (std::int64_t oh = 0; oh < ho; ++oh) {
                            const std::int64_t prow =
                                (c * hp + oh * stride_h + u) * wp + v;
                            const double* grow = g.data() + (o * ho + oh) * wo;
                            for (std::int64_t ow = 0; ow < wo; ++ow) {
                                const std::int64_t pi = prow + ow * stride_w;
                                dw += grow[ow] * (*pad)[pi];
                                if (xn->requires_grad)
                                    dpad[pi] += grow[ow] * wk;
                            }
                        }
                        if (gw) (*gw)[widx] += dw;
                    }
        if (xn->requires_grad) {
            // fold the padded gradient back: height pads are dropped (zero
            // padding), width pads wrap onto the opposite edge
            auto& gx = xn->grad_buf();
            for (std::int64_t c = 0; c < ci; ++c)
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t j = 0; j < wp; ++j) {
                        const std::int64_t src = ((j - pw) % wid + wid) % wid;
                        gx[(c * h + i) * wid + src] +=
                            dpad[(c * hp + i + ph) * wp + j];
                    }
        }
    });
    return Tensor(node);
}

// Tiles a length-C vector into a (C, H, W) map, one constant plane per
// channel. Equivalent to broadcasting against zeros but with a flat copy
// forward and a per-channel reduction backward.
inline Tensor tile_channels(const Tensor& v, std::int64_t h, std::int64_t w) {
    if (v.shape().size() != 1)
        throw std::invalid_argument("tile_channels: expected rank 1");
    if (h < 1 || w < 1)
        throw std::invalid_argument("tile_channels: bad target size");
    const std::int64_t c = v.shape()[0];
    const std::int64_t plane = h * w;
    const bool rg = detail::track({v});
    auto node = detail::make_node({c, h, w}, static_cast<std::size_t>(c * plane), rg);
    const auto& vv = v.data();
    for (std::int64_t k = 0; k < c; ++k)
        std::fill(node->v.begin() + k * plane, node->v.begin() + (k + 1) * plane,
                  vv[static_cast<std::size_t>(k)]);
    detail::attach(node, {v}, [c, plane](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gp = p.grad_buf();
        for (std::int64_t k = 0; k < c; ++k) {
            double acc = 0.0;
            const double* g = self.g.data() + k * plane;
            for (std::int64_t i = 0; i < plane; ++i) acc += g[i];
            gp[static_cast<std::size_t>(k)] += acc;
        }
    });
    return Tensor(node);
}

// Nearest-neighbour upsampling of a (C, H, W) map by integer factors.
inline Tensor upsample_nearest(const Tensor& x, int fh, int fw) {
    if (x.shape().size() != 3)
        throw std::invalid_argument("upsample_nearest: expected rank 3");
    if (fh < 1 || fw < 1)
        throw std::invalid_argument("upsample_nearest: factors must be >= 1");
    const std::int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const std::int64_t ho = h * fh, wo = w * fw;
    const bool rg = detail::track({x});
    auto node = detail::make_node({c, ho, wo},
                                  static_cast<std::size_t>(c * ho * wo), rg);
    auto& ov = node->v;
    const auto& xv = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < ho; ++i)
            for (std::int64_t j = 0; j < wo; ++j)
                ov[(ch * ho + i) * wo + j] =
                    xv[(ch * h + i / fh) * w + j / fw];
    auto xn = x.node();
    detail::attach(node, {x}, [=](TensorNode& self) {
        if (!xn->requires_grad) return;
        auto& gx = xn->grad_buf();
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t i = 0; i < ho; ++i)
                for (std::int64_t j = 0; j < wo; ++j)
                    gx[(ch * h + i / fh) * w + j / fw] +=
                        self.g[(ch * ho + i) * wo + j];
    });
    return Tensor(node);
}

// Instance normalization of a (C, H, W) map: each channel is standardized
// over its spatial extent, then scaled and shifted per channel.
inline Tensor instance_norm(const Tensor& x, const Tensor& gamma,
                            const Tensor& beta, double eps = 1e-5) {
    if (x.shape().size() != 3)
        throw std::invalid_argument("instance_norm: expected rank 3");
    const std::int64_t c = x.shape()[0], m = x.shape()[1] * x.shape()[2];
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw std::invalid_argument("instance_norm: affine shape mismatch");
    const bool rg = detail::track({x, gamma, beta});
    auto node = detail::make_node(x.shape(), x.data().size(), rg);
    auto xhat = std::make_shared<std::vector<double>>(x.data().size());
    auto inv_sigma = std::make_shared<std::vector<double>>(c);
    const auto& xv = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double mu = 0;
        for (std::int64_t i = 0; i < m; ++i) mu += xv[ch * m + i];
        mu /= static_cast<double>(m);
        double var = 0;
        for (std::int64_t i = 0; i < m; ++i) {
            const double d = xv[ch * m + i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[ch] = is;
        for (std::int64_t i = 0; i < m; ++i) {
            const double xh = (xv[ch * m + i] - mu) * is;
            (*xhat)[ch * m + i] = xh;
            node->v[ch * m + i] = gamma.data()[ch] * xh + beta.data()[ch];
        }
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    detail::attach(node, {x, gamma, beta}, [=](TensorNode& self) {
        auto* gx = xn->requires_grad ? &xn->grad_buf() : nullptr;
        auto* gg = gn->requires_grad ? &gn->grad_buf() : nullptr;
        auto* gb = bn->requires_grad ? &bn->grad_buf() : nullptr;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double sg = 0, sgx = 0;
            for (std::int64_t i = 0; i < m; ++i) {
                const double gi = self.g[ch * m + i];
                sg += gi;
                sgx += gi * (*xhat)[ch * m + i];
            }
            if (gb) (*gb)[ch] += sg;
            if (gg) (*gg)[ch] += sgx;
            if (gx) {
                const double scale =
                    gn->v[ch] * (*inv_sigma)[ch] / static_cast<double>(m);
                for (std::int64_t i = 0; i < m; ++i)
                    (*gx)[ch * m + i] +=
                        scale * (static_cast<double>(m) * self.g[ch * m + i] -
                                 sg - (*xhat)[ch * m + i] * sgx);
            }
        }
    });
    return Tensor(node);
}

// Parameter that defaults to all-ones (normalization gains). The store only
// creates zeros or fan-in uniforms, so a freshly created (all-zero) tensor is
// promoted to ones; checkpoint loading happens after construction and still
// wins.
inline Tensor ones_param(ParamStore& ps, const std::string& name, Shape shape) {
    const bool fresh = !ps.contains(name);
    Tensor t = ps.get_or_create(name, std::move(shape), 0);
    if (fresh)
        for (auto& v : t.mutable_data()) v = 1.0;
    return t;
}

// Dense layer y = x W^T + b over row batches. Weights live in the store.
class Linear {
public:
    Linear(ParamStore& ps, const std::string& prefix, std::int64_t in,
           std::int64_t out, bool zero_init = false)
        : w_(ps.get_or_create(prefix + ".w", {out, in},
                              zero_init ? 0 : in)),
          b_(ps.get_or_create(prefix + ".b", {out}, 0)) {}

    Tensor forward(const Tensor& x) const {
        return matmul(x, transpose2d(w_)) + b_;
    }

    const Tensor& weight() const { return w_; }
    const Tensor& bias() const { return b_; }

private:
    Tensor w_, b_;
};

// Convolution layer owning its kernel and bias.
class Conv2d {
public:
    Conv2d(ParamStore& ps, const std::string& prefix, std::int64_t in,
           std::int64_t out, std::int64_t k, int stride_h = 1,
           int stride_w = 1, bool zero_init = false)
        : w_(ps.get_or_create(prefix + ".w", {out, in, k, k},
                              zero_init ? 0 : in * k * k)),
          b_(ps.get_or_create(prefix + ".b", {out}, 0)),
          sh_(stride_h),
          sw_(stride_w) {}

    Tensor forward(const Tensor& x) const {
        return conv2d(x, w_, b_, sh_, sw_);
    }

private:
    Tensor w_, b_;
    int sh_, sw_;
};

// Sinusoidal embedding of a diffusion timestep, the usual interleaved
// sin/cos at geometrically spaced frequencies. Constant w.r.t. parameters.
inline Tensor time_embedding(std::int64_t t, std::int64_t dim) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("time_embedding: dim must be even, >= 2");
    const std::int64_t half = dim / 2;
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (std::int64_t i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(i) /
                     static_cast<double>(half > 1 ? half - 1 : 1));
        v[i] = std::sin(static_cast<double>(t) * freq);
        v[half + i] = std::cos(static_cast<double>(t) * freq);
    }
    return Tensor::from({dim}, std::move(v));
}

}  // namespace squall
