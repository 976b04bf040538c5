// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// State-space sequence core: ZOH discretization, the recurrent scan with a
// convolution-kernel oracle, point-level scan orders over the range-map
// grid, and the spider mamba block used by the denoiser.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "squall/params.hpp"
#include "squall/tensor.hpp"

namespace squall {

// ---------------------------------------------------------------------------
// ZOH discretization
// ---------------------------------------------------------------------------

/// abar = exp(delta*a); bbar = ((exp(delta*a) - 1)/a) * b, with the series
/// fallback delta*b*(1 + delta*a/2) once |delta*a| underflows the closed form.
inline std::pair<double, double> zoh_discretize(double a, double b,
                                                double delta) {
    if (!(delta > 0)) throw std::invalid_argument("zoh_discretize: delta must be positive");
    const double da = delta * a;
    const double abar = std::exp(da);
    double f;  // bbar = f * b
    if (std::fabs(da) < 1e-6)
        f = delta * (1.0 + da * 0.5);
    else
        f = (abar - 1.0) / a;
    return {abar, f * b};
}

// ---------------------------------------------------------------------------
// reference scan and convolution oracle (single channel, diagonal state)
// ---------------------------------------------------------------------------

/// Per-step discretized parameters of one scalar channel. Time-invariant
/// inputs simply repeat the same row each step.
struct SsmSequenceParams {
    int state_dim = 0;
    std::vector<std::vector<double>> abar;  // [k][n]
    std::vector<std::vector<double>> bbar;  // [k][n]
    std::vector<std::vector<double>> c;     // [k][n]
    double d_skip = 0.0;
};

/// Left-to-right recurrence h_k = abar h_{k-1} + bbar x_k, y_k = c.h_k + d x_k.
inline std::vector<double> ssm_scan(const SsmSequenceParams& p,
                                    const std::vector<double>& x) {
    const std::size_t m = x.size();
    if (p.abar.size() < m || p.bbar.size() < m || p.c.size() < m)
        throw std::invalid_argument("ssm_scan: fewer parameter steps than inputs");
    std::vector<double> h(static_cast<std::size_t>(p.state_dim), 0.0);
    std::vector<double> y(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        double acc = 0.0;
        for (int n = 0; n < p.state_dim; ++n) {
            h[n] = p.abar[k][n] * h[n] + p.bbar[k][n] * x[k];
            acc += p.c[k][n] * h[n];
        }
        y[k] = acc + p.d_skip * x[k];
    }
    return y;
}

/// Convolution-kernel route: K = (c.bbar, c.abar.bbar, ..., c.abar^{m-1}.bbar)
/// convolved with x. Exists purely as a test oracle; rejects parameters that
/// vary across steps.
inline std::vector<double> ssm_conv_oracle(const SsmSequenceParams& p,
                                           const std::vector<double>& x) {
    const std::size_t m = x.size();
    if (p.abar.size() < m || p.bbar.size() < m || p.c.size() < m)
        throw std::invalid_argument("ssm_conv_oracle: fewer parameter steps than inputs");
    for (std::size_t k = 1; k < m; ++k)
        if (p.abar[k] != p.abar[0] || p.bbar[k] != p.bbar[0] ||
            p.c[k] != p.c[0])
            throw std::invalid_argument(
                "ssm_conv_oracle: parameters must be time-invariant");
    // kernel[j] = sum_n c_n * abar_n^j * bbar_n
    std::vector<double> kernel(m, 0.0);
    for (int n = 0; n < p.state_dim; ++n) {
        double pw = 1.0;
        for (std::size_t j = 0; j < m; ++j) {
            kernel[j] += p.c[0][n] * pw * p.bbar[0][n];
            pw *= p.abar[0][n];
        }
    }
    std::vector<double> y(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        double acc = p.d_skip * x[k];
        for (std::size_t j = 0; j <= k; ++j) acc += kernel[j] * x[k - j];
        y[k] = acc;
    }
    return y;
}

// ---------------------------------------------------------------------------
// scan orders
// ---------------------------------------------------------------------------

enum class ScanDirection { row_forward, row_reverse, col_forward, col_reverse };

/// Pixel visiting order over an H x W grid, as indices into the row-major
/// flattening. Rows follow beam circles, columns follow central rays.
inline std::vector<std::int64_t> scan_order(ScanDirection dir, int h, int w) {
    if (h < 1 || w < 1) throw std::invalid_argument("scan_order: H, W must be >= 1");
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(h) * w);
    switch (dir) {
        case ScanDirection::row_forward:
        case ScanDirection::row_reverse:
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i)
                idx.push_back(i);
            break;
        case ScanDirection::col_forward:
        case ScanDirection::col_reverse:
            for (std::int64_t c = 0; c < w; ++c)
                for (std::int64_t r = 0; r < h; ++r)
                    idx.push_back(r * w + c);
            break;
    }
    if (dir == ScanDirection::row_reverse || dir == ScanDirection::col_reverse)
        std::reverse(idx.begin(), idx.end());
    return idx;
}

// ---------------------------------------------------------------------------
// selective scan (fused autodiff op)
// ---------------------------------------------------------------------------

/// Input-dependent selective SSM over a (J,D) sequence:
///   delta_{k,d} = softplus(x_{k,d} w_delta_d + b_delta_d)
///   B_k = x_k W_B,  C_k = x_k W_C          (N-dim, shared across channels)
///   a_{d,n} = -exp(Alog_{d,n})
///   (abar, bbar) by ZOH per (k,d,n)
///   h_{k,d,n} = abar h_{k-1,d,n} + bbar x_{k,d}
///   y_{k,d} = sum_n C_{k,n} h_{k,d,n} + D_d x_{k,d}
/// `reverse` runs the recurrence from the last row to the first.
inline Tensor selective_scan(const Tensor& x, const Tensor& a_log,
                             const Tensor& w_b, const Tensor& w_c,
                             const Tensor& w_delta, const Tensor& b_delta,
                             const Tensor& d_skip, bool reverse = false) {
    if (x.shape().size() != 2)
        throw std::invalid_argument("selective_scan: x must be (J,D)");
    const std::int64_t J = x.shape()[0];
    const std::int64_t D = x.shape()[1];
    if (a_log.shape().size() != 2 || a_log.shape()[0] != D)
        throw std::invalid_argument("selective_scan: a_log must be (D,N)");
    const std::int64_t N = a_log.shape()[1];
    if (w_b.shape() != Shape{D, N} || w_c.shape() != Shape{D, N} ||
        w_delta.shape() != Shape{D} || b_delta.shape() != Shape{D} ||
        d_skip.shape() != Shape{D})
        throw std::invalid_argument("selective_scan: parameter shape mismatch");

    const bool rg =
        detail::track({x, a_log, w_b, w_c, w_delta, b_delta, d_skip});
    auto node = detail::make_node({J, D}, static_cast<std::size_t>(J * D), rg);

    const double* xv = x.data().data();
    const double* alv = a_log.data().data();
    const double* wbv = w_b.data().data();
    const double* wcv = w_c.data().data();
    const double* wdv = w_delta.data().data();
    const double* bdv = b_delta.data().data();
    const double* dsv = d_skip.data().data();

    // per-cell history kept for the backward sweep only (uninitialized on
    // purpose: every slot is written below): states, discrete transition
    // abar, and input factor f, so the backward pass never re-exponentiates
    std::shared_ptr<double[]> h_all, abar_all, f_all;
    if (rg) {
        const std::size_t cells = static_cast<std::size_t>(J * D * N);
        h_all = std::shared_ptr<double[]>(new double[cells]);
        abar_all = std::shared_ptr<double[]>(new double[cells]);
        f_all = std::shared_ptr<double[]>(new double[cells]);
    }

    auto softplus_d = [](double u) {
        return u > 30 ? u : std::log1p(std::exp(u));
    };

    // a = -exp(a_log) is position-independent: hoist it out of the scan
    std::vector<double> aneg(static_cast<std::size_t>(D * N));
    for (std::int64_t i = 0; i < D * N; ++i)
        aneg[static_cast<std::size_t>(i)] = -std::exp(alv[i]);

    std::vector<double> bk(static_cast<std::size_t>(N)), ck(static_cast<std::size_t>(N));
    std::vector<double> h(static_cast<std::size_t>(D * N), 0.0);
    for (std::int64_t s = 0; s < J; ++s) {
        const std::int64_t k = reverse ? J - 1 - s : s;
        const double* xk = xv + k * D;
        for (std::int64_t n = 0; n < N; ++n) {
            double b = 0, c = 0;
            for (std::int64_t d = 0; d < D; ++d) {
                b += xk[d] * wbv[d * N + n];
                c += xk[d] * wcv[d * N + n];
            }
            bk[static_cast<std::size_t>(n)] = b;
            ck[static_cast<std::size_t>(n)] = c;
        }
        double* hs = rg ? h_all.get() + s * D * N : nullptr;
        double* as = rg ? abar_all.get() + s * D * N : nullptr;
        double* fs = rg ? f_all.get() + s * D * N : nullptr;
        double* yk = node->v.data() + k * D;
        for (std::int64_t d = 0; d < D; ++d) {
            const double delta = softplus_d(xk[d] * wdv[d] + bdv[d]);
            double acc = 0.0;
            double* hd = h.data() + d * N;
            for (std::int64_t n = 0; n < N; ++n) {
                const double a = aneg[static_cast<std::size_t>(d * N + n)];
                const double da = delta * a;
                const double abar = std::exp(da);
                const double f = std::fabs(da) < 1e-6
                                     ? delta * (1.0 + da * 0.5)
                                     : (abar - 1.0) / a;
                hd[n] = abar * hd[n] + f * bk[static_cast<std::size_t>(n)] * xk[d];
                acc += ck[static_cast<std::size_t>(n)] * hd[n];
                if (hs) {
                    as[d * N + n] = abar;
                    fs[d * N + n] = f;
                }
            }
            yk[d] = acc + dsv[d] * xk[d];
            if (hs) std::copy(hd, hd + N, hs + d * N);
        }
    }

    detail::attach(
        node, {x, a_log, w_b, w_c, w_delta, b_delta, d_skip},
        [J, D, N, reverse, h_all, abar_all, f_all](TensorNode& self) {
            auto& px = *self.parents[0];
            auto& pal = *self.parents[1];
            auto& pwb = *self.parents[2];
            auto& pwc = *self.parents[3];
            auto& pwd = *self.parents[4];
            auto& pbd = *self.parents[5];
            auto& pds = *self.parents[6];

            const double* xv = px.v.data();
            const double* alv = pal.v.data();
            const double* wbv = pwb.v.data();
            const double* wcv = pwc.v.data();
            const double* wdv = pwd.v.data();
            const double* bdv = pbd.v.data();
            const double* dsv = pds.v.data();
            const double* gy = self.g.data();

            double* gx = px.requires_grad ? px.grad_buf().data() : nullptr;
            double* gal = pal.requires_grad ? pal.grad_buf().data() : nullptr;
            double* gwb = pwb.requires_grad ? pwb.grad_buf().data() : nullptr;
            double* gwc = pwc.requires_grad ? pwc.grad_buf().data() : nullptr;
            double* gwd = pwd.requires_grad ? pwd.grad_buf().data() : nullptr;
            double* gbd = pbd.requires_grad ? pbd.grad_buf().data() : nullptr;
            double* gds = pds.requires_grad ? pds.grad_buf().data() : nullptr;

            std::vector<double> lambda(static_cast<std::size_t>(D * N), 0.0);
            std::vector<double> bk(static_cast<std::size_t>(N)),
                ck(static_cast<std::size_t>(N)), dB(static_cast<std::size_t>(N)),
                dC(static_cast<std::size_t>(N));

            auto softplus_d = [](double u) {
                return u > 30 ? u : std::log1p(std::exp(u));
            };
            auto sigmoid_d = [](double u) {
                return u >= 0 ? 1.0 / (1.0 + std::exp(-u))
                              : std::exp(u) / (1.0 + std::exp(u));
            };

            std::vector<double> aneg(static_cast<std::size_t>(D * N));
            for (std::int64_t i = 0; i < D * N; ++i)
                aneg[static_cast<std::size_t>(i)] = -std::exp(alv[i]);

            for (std::int64_t s = J - 1; s >= 0; --s) {
                const std::int64_t k = reverse ? J - 1 - s : s;
                const double* xk = xv + k * D;
                const double* hs = h_all.get() + s * D * N;
                const double* hprev = s > 0 ? h_all.get() + (s - 1) * D * N : nullptr;
                const double* as = abar_all.get() + s * D * N;
                const double* fs = f_all.get() + s * D * N;
                const double* gk = gy + k * D;

                for (std::int64_t n = 0; n < N; ++n) {
                    double b = 0, c = 0;
                    for (std::int64_t d = 0; d < D; ++d) {
                        b += xk[d] * wbv[d * N + n];
                        c += xk[d] * wcv[d * N + n];
                    }
                    bk[static_cast<std::size_t>(n)] = b;
                    ck[static_cast<std::size_t>(n)] = c;
                    dB[static_cast<std::size_t>(n)] = 0;
                    dC[static_cast<std::size_t>(n)] = 0;
                }

                for (std::int64_t d = 0; d < D; ++d) {
                    const double u = xk[d] * wdv[d] + bdv[d];
                    const double delta = softplus_d(u);
                    double* lam = lambda.data() + d * N;
                    const double* hd = hs + d * N;
                    double ddelta = 0.0;
                    double gxd = 0.0;

                    // y_k contribution
                    if (gds) gds[d] += gk[d] * xk[d];
                    gxd += gk[d] * dsv[d];

                    for (std::int64_t n = 0; n < N; ++n) {
                        lam[n] += gk[d] * ck[static_cast<std::size_t>(n)];
                        dC[static_cast<std::size_t>(n)] += gk[d] * hd[n];

                        const double a = aneg[static_cast<std::size_t>(d * N + n)];
                        const double da = delta * a;
                        const double abar = as[d * N + n];
                        const double f = fs[d * N + n];
                        double df_ddelta, df_da;
                        if (std::fabs(da) < 1e-6) {
                            df_ddelta = 1.0 + da;
                            df_da = delta * delta * 0.5;
                        } else {
                            df_ddelta = abar;
                            df_da = (delta * abar * a - abar + 1.0) / (a * a);
                        }
                        const double hp = hprev ? hprev[d * N + n] : 0.0;
                        const double dabar = lam[n] * hp;
                        const double dbbar = lam[n] * xk[d];
                        const double bn = bk[static_cast<std::size_t>(n)];

                        gxd += lam[n] * f * bn;  // bbar * x term
                        ddelta += dabar * a * abar + dbbar * bn * df_ddelta;
                        if (gal)
                            gal[d * N + n] +=
                                (dabar * delta * abar + dbbar * bn * df_da) * a;
                        dB[static_cast<std::size_t>(n)] += dbbar * f;

                        lam[n] *= abar;  // adjoint flows to h_{k-1}
                    }

                    const double du = ddelta * sigmoid_d(u);
                    if (gwd) gwd[d] += du * xk[d];
                    if (gbd) gbd[d] += du;
                    gxd += du * wdv[d];
                    if (gx) gx[k * D + d] += gxd;
                }

                // fold dB, dC back through the projections
                for (std::int64_t d = 0; d < D; ++d) {
                    double gxd = 0.0;
                    for (std::int64_t n = 0; n < N; ++n) {
                        if (gwb) gwb[d * N + n] += dB[static_cast<std::size_t>(n)] * xk[d];
                        if (gwc) gwc[d * N + n] += dC[static_cast<std::size_t>(n)] * xk[d];
                        gxd += dB[static_cast<std::size_t>(n)] * wbv[d * N + n] +
                               dC[static_cast<std::size_t>(n)] * wcv[d * N + n];
                    }
                    if (gx) gx[k * D + d] += gxd;
                }
            }
        });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// spider mamba block
// ---------------------------------------------------------------------------

struct SpiderConfig {
    int channels = 0;   // C, divisible by 4
    int embed_dim = 8;  // D
    int state_dim = 4;  // N
    int layers = 1;     // mamba layers per group
};

namespace detail {

inline double inv_softplus(double y) { return std::log(std::expm1(y)); }

}  // namespace detail

/// Layer norm over the channel dimension of a (J,C) sequence.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                              const Tensor& beta, double eps = 1e-5) {
    Tensor mu = reshape(mean_axis(x, 1), {x.shape()[0], 1});
    Tensor centered = x - mu;
    Tensor var = reshape(mean_axis(centered * centered, 1), {x.shape()[0], 1});
    Tensor inv = 1.0 / sqrt(var + eps);
    return centered * inv * gamma + beta;
}

/// One channel group: LN -> projection -> L bidirectional selective-scan
/// layers -> LN -> zero-init MLP head back to the group width.
class SpiderGroup {
public:
    SpiderGroup(ParamStore& ps, const std::string& prefix, int group_channels,
                const SpiderConfig& cfg)
        : cfg_(cfg), gc_(group_channels), prefix_(prefix) {
        const int d = cfg.embed_dim, n = cfg.state_dim;
        ln_g_ = ps.get_or_create(prefix + ".ln.gamma", {gc_}, 0);
        for (auto& v : ln_g_.mutable_data()) v = v == 0.0 ? 1.0 : v;
        ln_b_ = ps.zeros(prefix + ".ln.beta", {gc_});
        w_proj_ = ps.get_or_create(prefix + ".proj.w", {gc_, d}, gc_);
        for (int l = 0; l < cfg.layers; ++l)
            for (const char* dir : {"fwd", "rev"}) {
                const std::string p =
                    prefix + ".l" + std::to_string(l) + "." + dir;
                Tensor a_log = ps.get_or_create(p + ".a_log", {d, n}, 0);
                if (!initialized(a_log)) {
                    auto& av = a_log.mutable_data();
                    for (int dd = 0; dd < d; ++dd)
                        for (int nn = 0; nn < n; ++nn)
                            av[static_cast<std::size_t>(dd) * n + nn] =
                                std::log(static_cast<double>(nn + 1));
                }
                ps.get_or_create(p + ".w_b", {d, n}, d);
                ps.get_or_create(p + ".w_c", {d, n}, d);
                ps.get_or_create(p + ".w_delta", {d}, d);
                Tensor b_delta = ps.get_or_create(p + ".b_delta", {d}, 0);
                if (!initialized(b_delta)) {
                    // softplus(b) spans [1e-3, 1e-1] across channels
                    auto& bv = b_delta.mutable_data();
                    for (int dd = 0; dd < d; ++dd) {
                        double t = d > 1 ? static_cast<double>(dd) / (d - 1) : 0.5;
                        bv[static_cast<std::size_t>(dd)] = detail::inv_softplus(
                            std::exp(std::log(1e-3) +
                                     t * (std::log(1e-1) - std::log(1e-3))));
                    }
                }
                ps.zeros(p + ".d_skip", {d});
            }
        mlp_w1_ = ps.get_or_create(prefix + ".head.w1", {d, d}, d);
        mlp_b1_ = ps.zeros(prefix + ".head.b1", {d});
        mlp_w2_ = ps.zeros(prefix + ".head.w2", {d, gc_});  // zero init: identity block
        mlp_b2_ = ps.zeros(prefix + ".head.b2", {gc_});
        ps_ = &ps;
    }

    /// x: (J, gc) in scan order. Returns the residual delta (J, gc).
    Tensor forward(const Tensor& x) const {
        Tensor t = matmul(layer_norm_rows(x, ln_g_, ln_b_), w_proj_);
        for (int l = 0; l < cfg_.layers; ++l) {
            const std::string p = prefix_ + ".l" + std::to_string(l);
            Tensor fwd = selective_scan(
                t, ps_->at(p + ".fwd.a_log"), ps_->at(p + ".fwd.w_b"),
                ps_->at(p + ".fwd.w_c"), ps_->at(p + ".fwd.w_delta"),
                ps_->at(p + ".fwd.b_delta"), ps_->at(p + ".fwd.d_skip"), false);
            Tensor rev = selective_scan(
                t, ps_->at(p + ".rev.a_log"), ps_->at(p + ".rev.w_b"),
                ps_->at(p + ".rev.w_c"), ps_->at(p + ".rev.w_delta"),
                ps_->at(p + ".rev.b_delta"), ps_->at(p + ".rev.d_skip"), true);
            t = t + fwd + rev;
        }
        Tensor h = silu(matmul(t, mlp_w1_) + mlp_b1_);
        return matmul(h, mlp_w2_) + mlp_b2_;
    }

private:
    static bool initialized(const Tensor& t) {
        for (double v : t.data())
            if (v != 0.0) return true;
        return false;
    }

    SpiderConfig cfg_;
    int gc_;
    std::string prefix_;
    ParamStore* ps_ = nullptr;
    Tensor ln_g_, ln_b_, w_proj_, mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
};

/// Four channel groups scanned along one grid axis, with a residual add.
class SpiderMambaBlock {
public:
    SpiderMambaBlock(ParamStore& ps, const std::string& prefix,
                     SpiderConfig cfg, ScanDirection axis)
        : cfg_(cfg), axis_(axis) {
        if (cfg.channels % 4 != 0)
            throw std::invalid_argument("SpiderMambaBlock: channels (" +
                                        std::to_string(cfg.channels) +
                                        ") must be divisible by 4");
        const int gc = cfg.channels / 4;
        groups_.reserve(4);
        for (int g = 0; g < 4; ++g)
            groups_.emplace_back(ps, prefix + ".g" + std::to_string(g), gc, cfg);
    }

    /// f: (J, C) feature sequence in row-major pixel order; h*w == J.
    Tensor forward(const Tensor& f, int h, int w) const {
        if (f.shape().size() != 2 || f.shape()[1] != cfg_.channels)
            throw std::invalid_argument("SpiderMambaBlock: expected (J," +
                                        std::to_string(cfg_.channels) +
                                        "), got " + shape_str(f.shape()));
        if (f.shape()[0] != static_cast<std::int64_t>(h) * w)
            throw std::invalid_argument("SpiderMambaBlock: J != H*W");
        const int gc = cfg_.channels / 4;

        // permute into scan order once (identity for row scans)
        const bool is_col = axis_ == ScanDirection::col_forward ||
                            axis_ == ScanDirection::col_reverse;
        std::vector<std::int64_t> order =
            scan_order(is_col ? ScanDirection::col_forward
                              : ScanDirection::row_forward,
                       h, w);
        Tensor seq = is_col ? index_select_rows(f, order) : f;

        std::vector<Tensor> outs;
        outs.reserve(4);
        for (int g = 0; g < 4; ++g)
            outs.push_back(groups_[static_cast<std::size_t>(g)].forward(
                slice(seq, 1, g * gc, gc)));
        Tensor delta = concat(outs, 1);

        if (is_col) {  // undo the permutation
            std::vector<std::int64_t> inverse(order.size());
            for (std::size_t i = 0; i < order.size(); ++i)
                inverse[static_cast<std::size_t>(order[i])] =
                    static_cast<std::int64_t>(i);
            delta = index_select_rows(delta, inverse);
        }
        return f + delta;
    }

    ScanDirection axis() const { return axis_; }

private:
    SpiderConfig cfg_;
    ScanDirection axis_;
    std::vector<SpiderGroup> groups_;
};

}  // namespace squall
