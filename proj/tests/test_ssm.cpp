// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "squall/ssm.hpp"

using namespace squall;

namespace {

SsmSequenceParams random_ti_params(Rng& rng, int n, std::size_t m) {
    SsmSequenceParams p;
    p.state_dim = n;
    std::vector<double> abar(n), bbar(n), c(n);
    for (int i = 0; i < n; ++i) {
        abar[i] = rng.uniform(-0.95, 0.95);
        bbar[i] = rng.uniform(-1, 1);
        c[i] = rng.uniform(-1, 1);
    }
    p.abar.assign(m, abar);
    p.bbar.assign(m, bbar);
    p.c.assign(m, c);
    p.d_skip = rng.uniform(-1, 1);
    return p;
}

// relative-error gradient check of a scalar loss against one parameter tensor
double max_rel_err(const std::vector<double>& analytic,
                   const std::vector<double>& fd) {
    double worst = 0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        double denom = std::max({std::fabs(analytic[i]), std::fabs(fd[i]), 1e-6});
        worst = std::max(worst, std::fabs(analytic[i] - fd[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("zoh discretization") {
    SECTION("a = 0 limit") {
        auto [abar, bbar] = zoh_discretize(0.0, 2.0, 0.5);
        REQUIRE(abar == Catch::Approx(1.0));
        REQUIRE(bbar == Catch::Approx(1.0));  // delta * b
    }
    SECTION("closed form at a=-1, delta=1, b=1") {
        auto [abar, bbar] = zoh_discretize(-1.0, 1.0, 1.0);
        REQUIRE(abar == Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
        REQUIRE(bbar == Catch::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
    }
    SECTION("first-order Taylor limit at small delta") {
        const double a = -3.0, delta = 1e-8;
        auto [abar, bbar] = zoh_discretize(a, 1.0, delta);
        REQUIRE(std::fabs(abar - (1.0 + delta * a)) < 1e-12);
        (void)bbar;
    }
    SECTION("nonpositive delta rejected") {
        REQUIRE_THROWS_AS(zoh_discretize(-1, 1, 0), std::invalid_argument);
    }
}

TEST_CASE("recurrent scan") {
    SECTION("memoryless case") {
        SsmSequenceParams p;
        p.state_dim = 1;
        p.abar.assign(3, {0.0});
        p.bbar.assign(3, {1.0});
        p.c.assign(3, {2.0});  // C*bbar = 2
        p.d_skip = 0.0;
        auto y = ssm_scan(p, {1, 2, 3});
        REQUIRE(y == std::vector<double>({2, 4, 6}));
    }
    SECTION("length-1 sequence") {
        Rng rng(1);
        auto p = random_ti_params(rng, 3, 1);
        auto y = ssm_scan(p, {1.5});
        double expect = p.d_skip * 1.5;
        for (int n = 0; n < 3; ++n) expect += p.c[0][n] * p.bbar[0][n] * 1.5;
        REQUIRE(y[0] == Catch::Approx(expect).epsilon(1e-12));
    }
    SECTION("empty sequence -> empty output") {
        SsmSequenceParams p;
        p.state_dim = 1;
        REQUIRE(ssm_scan(p, {}).empty());
    }
}

TEST_CASE("scan equals convolution oracle on random time-invariant cases") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_index(4));
        const std::size_t m = 1 + rng.uniform_index(16);
        auto p = random_ti_params(rng, n, m);
        std::vector<double> x(m);
        for (auto& v : x) v = rng.uniform(-2, 2);
        auto ys = ssm_scan(p, x);
        auto yc = ssm_conv_oracle(p, x);
        for (std::size_t k = 0; k < m; ++k)
            REQUIRE(std::fabs(ys[k] - yc[k]) < 1e-10);
    }
}

TEST_CASE("conv oracle specifics") {
    SECTION("m = 1 gives y = C bbar x (+ skip)") {
        Rng rng(9);
        auto p = random_ti_params(rng, 2, 1);
        p.d_skip = 0;
        auto y = ssm_conv_oracle(p, {2.0});
        double expect = 0;
        for (int n = 0; n < 2; ++n) expect += p.c[0][n] * p.bbar[0][n] * 2.0;
        REQUIRE(y[0] == Catch::Approx(expect).epsilon(1e-12));
    }
    SECTION("rejects input-dependent parameters") {
        Rng rng(11);
        auto p = random_ti_params(rng, 2, 4);
        p.abar[2][0] += 0.1;
        REQUIRE_THROWS_AS(ssm_conv_oracle(p, {1, 2, 3, 4}),
                          std::invalid_argument);
    }
}

TEST_CASE("stability on long sequences") {
    // a <= 0 and bounded delta: state stays bounded on constant input
    Rng rng(13);
    SsmSequenceParams p = random_ti_params(rng, 4, 10000);
    for (auto& row : p.abar)
        for (auto& v : row) v = std::fabs(v);  // abar = exp(da) in (0,1)
    std::vector<double> x(10000, 1.0);
    auto y = ssm_scan(p, x);
    for (double v : y) REQUIRE(std::isfinite(v));
    double bound = std::fabs(p.d_skip);
    for (int n = 0; n < 4; ++n)
        bound += std::fabs(p.c[0][n]) * std::fabs(p.bbar[0][n]) /
                 (1.0 - std::fabs(p.abar[0][n]));
    for (double v : y) REQUIRE(std::fabs(v) <= bound + 1e-9);
}

TEST_CASE("scan orders") {
    SECTION("2x3 row forward") {
        REQUIRE(scan_order(ScanDirection::row_forward, 2, 3) ==
                std::vector<std::int64_t>({0, 1, 2, 3, 4, 5}));
    }
    SECTION("2x3 col forward") {
        REQUIRE(scan_order(ScanDirection::col_forward, 2, 3) ==
                std::vector<std::int64_t>({0, 3, 1, 4, 2, 5}));
    }
    SECTION("reverse variants reverse the sequence") {
        auto fwd = scan_order(ScanDirection::row_forward, 3, 4);
        auto rev = scan_order(ScanDirection::row_reverse, 3, 4);
        std::reverse(fwd.begin(), fwd.end());
        REQUIRE(fwd == rev);
    }
    SECTION("every order is a permutation") {
        for (auto dir : {ScanDirection::row_forward, ScanDirection::row_reverse,
                         ScanDirection::col_forward, ScanDirection::col_reverse}) {
            auto idx = scan_order(dir, 5, 7);
            std::sort(idx.begin(), idx.end());
            for (std::int64_t i = 0; i < 35; ++i) REQUIRE(idx[i] == i);
        }
    }
}

TEST_CASE("selective scan forward matches per-channel reference") {
    Rng rng(17);
    const int J = 6, D = 3, N = 2;
    ParamStore ps(21);
    Tensor x = uniform_init({J, D}, -1, 1, rng, false);
    Tensor a_log = uniform_init({D, N}, -1.0, 0.5, rng, false);
    Tensor w_b = uniform_init({D, N}, -0.7, 0.7, rng, false);
    Tensor w_c = uniform_init({D, N}, -0.7, 0.7, rng, false);
    Tensor w_d = uniform_init({D}, -0.3, 0.3, rng, false);
    Tensor b_d = uniform_init({D}, -2.0, 0.0, rng, false);
    Tensor d_s = uniform_init({D}, -0.5, 0.5, rng, false);

    Tensor y = selective_scan(x, a_log, w_b, w_c, w_d, b_d, d_s, false);

    for (int d = 0; d < D; ++d) {
        SsmSequenceParams p;
        p.state_dim = N;
        p.d_skip = d_s.data()[d];
        std::vector<double> xs(J);
        for (int k = 0; k < J; ++k) {
            xs[k] = x.data()[k * D + d];
            const double u = xs[k] * w_d.data()[d] + b_d.data()[d];
            const double delta = std::log1p(std::exp(u));
            std::vector<double> ab(N), bb(N), cc(N);
            for (int n = 0; n < N; ++n) {
                double bkn = 0, ckn = 0;
                for (int dd = 0; dd < D; ++dd) {
                    bkn += x.data()[k * D + dd] * w_b.data()[dd * N + n];
                    ckn += x.data()[k * D + dd] * w_c.data()[dd * N + n];
                }
                const double a = -std::exp(a_log.data()[d * N + n]);
                auto [abar, bbar] = zoh_discretize(a, bkn, delta);
                ab[n] = abar;
                bb[n] = bbar;
                cc[n] = ckn;
            }
            p.abar.push_back(ab);
            p.bbar.push_back(bb);
            p.c.push_back(cc);
        }
        auto yd = ssm_scan(p, xs);
        for (int k = 0; k < J; ++k)
            REQUIRE(y.data()[k * D + d] == Catch::Approx(yd[k]).margin(1e-12));
    }
}

TEST_CASE("selective scan gradients match finite differences") {
    Rng rng(19);
    const int J = 5, D = 2, N = 2;
    auto make = [&](Shape s, double lo, double hi) {
        return uniform_init(std::move(s), lo, hi, rng, true);
    };
    Tensor x = make({J, D}, -1, 1);
    Tensor a_log = make({D, N}, -1.0, 0.5);
    Tensor w_b = make({D, N}, -0.7, 0.7);
    Tensor w_c = make({D, N}, -0.7, 0.7);
    Tensor w_d = make({D}, -0.3, 0.3);
    Tensor b_d = make({D}, -2.0, 0.0);
    Tensor d_s = make({D}, -0.5, 0.5);
    std::vector<Tensor> params = {x, a_log, w_b, w_c, w_d, b_d, d_s};

    for (bool reverse : {false, true}) {
        for (auto& p : params) p.zero_grad();
        Tensor weights = Tensor::from({J * D}, [&] {
            std::vector<double> w(J * D);
            for (auto& v : w) v = rng.uniform(-1, 1);
            return w;
        }());
        auto loss_fn = [&](const std::vector<Tensor>& ts) {
            Tensor y = selective_scan(ts[0], ts[1], ts[2], ts[3], ts[4], ts[5],
                                      ts[6], reverse);
            return sum(reshape(y, {J * D}) * weights);
        };
        backward(loss_fn(params));
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto fd = finite_diff(
                [&](const Tensor& t) {
                    std::vector<Tensor> ts = params;
                    ts[pi] = t;
                    return loss_fn(ts).item();
                },
                Tensor::from(params[pi].shape(), params[pi].data()), 1e-6);
            INFO("reverse=" << reverse << " param " << pi);
            REQUIRE(max_rel_err(params[pi].grad(), fd) < 1e-4);
        }
    }
}

TEST_CASE("bidirectional symmetry: reversed input, swapped direction") {
    Rng rng(23);
    const int J = 7, D = 3, N = 2;
    Tensor x = uniform_init({J, D}, -1, 1, rng, false);
    Tensor a_log = uniform_init({D, N}, -1.0, 0.5, rng, false);
    Tensor w_b = uniform_init({D, N}, -0.7, 0.7, rng, false);
    Tensor w_c = uniform_init({D, N}, -0.7, 0.7, rng, false);
    Tensor w_d = uniform_init({D}, -0.3, 0.3, rng, false);
    Tensor b_d = uniform_init({D}, -2.0, 0.0, rng, false);
    Tensor d_s = uniform_init({D}, -0.5, 0.5, rng, false);

    std::vector<std::int64_t> flip(J);
    for (int i = 0; i < J; ++i) flip[i] = J - 1 - i;
    Tensor xr = index_select_rows(x, flip);

    Tensor a = selective_scan(x, a_log, w_b, w_c, w_d, b_d, d_s, true);
    Tensor b = index_select_rows(
        selective_scan(xr, a_log, w_b, w_c, w_d, b_d, d_s, false), flip);
    for (std::size_t i = 0; i < a.data().size(); ++i)
        REQUIRE(a.data()[i] == Catch::Approx(b.data()[i]).margin(1e-12));
}

TEST_CASE("spider mamba block") {
    SpiderConfig cfg{8, 4, 2, 1};
    SECTION("channels must divide by 4") {
        ParamStore ps(1);
        REQUIRE_THROWS_AS(
            SpiderMambaBlock(ps, "bad", SpiderConfig{6, 4, 2, 1},
                             ScanDirection::row_forward),
            std::invalid_argument);
    }
    SECTION("zero input passes through as zero") {
        ParamStore ps(2);
        SpiderMambaBlock block(ps, "b", cfg, ScanDirection::row_forward);
        Tensor f = Tensor::zeros({12, 8});
        Tensor y = block.forward(f, 3, 4);
        for (double v : y.data()) REQUIRE(v == 0.0);
    }
    SECTION("block starts as identity (zero-init head)") {
        ParamStore ps(3);
        SpiderMambaBlock block(ps, "b", cfg, ScanDirection::col_forward);
        Rng rng(5);
        Tensor f = uniform_init({12, 8}, -1, 1, rng, false);
        Tensor y = block.forward(f, 3, 4);
        REQUIRE(y.data() == f.data());
    }
    SECTION("col scan equals row scan on the transposed grid") {
        ParamStore ps(4);
        const int h = 4, w = 3;
        SpiderMambaBlock col_block(ps, "b", cfg, ScanDirection::col_forward);
        SpiderMambaBlock row_block(ps, "b", cfg, ScanDirection::row_forward);
        // give the heads nonzero weights so the block is not the identity
        Rng rng(7);
        for (int g = 0; g < 4; ++g) {
            auto wname = "b.g" + std::to_string(g) + ".head.w2";
            for (auto& v : ps.at(wname).mutable_data()) v = rng.uniform(-1, 1);
        }
        Rng rng2(9);
        Tensor f = uniform_init({h * w, 8}, -1, 1, rng2, false);
        // transposed-grid copy: fT[(c,r)] = f[(r,c)]
        std::vector<std::int64_t> perm(h * w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) perm[c * h + r] = r * w + c;
        Tensor ft = index_select_rows(f, perm);
        Tensor y_col = col_block.forward(f, h, w);
        Tensor y_row = row_block.forward(ft, w, h);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < 8; ++ch)
                    REQUIRE(y_col.data()[(r * w + c) * 8 + ch] ==
                            Catch::Approx(y_row.data()[(c * h + r) * 8 + ch])
                                .margin(1e-12));
    }
    SECTION("gradient w.r.t. projection matrix matches finite differences") {
        ParamStore ps(6);
        SpiderMambaBlock block(ps, "b", cfg, ScanDirection::row_forward);
        Rng rng(11);
        // non-identity head
        for (int g = 0; g < 4; ++g) {
            auto wname = "b.g" + std::to_string(g) + ".head.w2";
            for (auto& v : ps.at(wname).mutable_data()) v = rng.uniform(-0.5, 0.5);
        }
        Tensor f = uniform_init({6, 8}, -1, 1, rng, false);
        Tensor w_proj = ps.at("b.g0.proj.w");
        ps.zero_grad();
        backward(sum(block.forward(f, 2, 3)));
        auto analytic = w_proj.grad();
        std::vector<double> saved = w_proj.data();
        auto fd = finite_diff(
            [&](const Tensor& t) {
                w_proj.mutable_data() = t.data();
                double v = sum(block.forward(f, 2, 3)).item();
                w_proj.mutable_data() = saved;
                return v;
            },
            Tensor::from(w_proj.shape(), saved), 1e-6);
        REQUIRE(max_rel_err(analytic, fd) < 1e-4);
    }
}
