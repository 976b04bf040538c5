// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// DDPM machinery and the U-shaped denoiser. The forward process follows the
// standard linear-beta schedule; the denoiser predicts the injected noise
// (epsilon parameterization) from the noisy normalized range map, the
// timestep, and a weather conditioning vector. Each U-level pairs a
// convolution block with a spider mamba block; scan axes alternate between
// beam circles (rows) and central rays (columns) through depth.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "squall/align.hpp"
#include "squall/control.hpp"
#include "squall/mdp.hpp"
#include "squall/nn.hpp"
#include "squall/ssm.hpp"

namespace squall {

// ---------------------------------------------------------------------------
// noise schedule
// ---------------------------------------------------------------------------

// All tables are indexed 1..T; index 0 holds the conventions alpha_bar[0]=1,
// beta_tilde computed with that boundary (so beta_tilde[1] == 0).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta, alpha, alpha_bar, beta_tilde;
};

inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument(
            "make_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.beta_tilde.assign(static_cast<std::size_t>(T) + 1, 0.0);
    for (int t = 1; t <= T; ++t) {
        const double frac = T == 1 ? 0.0 : (t - 1) / static_cast<double>(T - 1);
        s.beta[t] = beta_start + frac * (beta_end - beta_start);
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
        s.beta_tilde[t] =
            (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
    }
    return s;
}

inline void check_timestep(int t, const NoiseSchedule& s, const char* op) {
    if (t < 1 || t > s.T)
        throw std::invalid_argument(std::string(op) + ": timestep " +
                                    std::to_string(t) + " outside [1, " +
                                    std::to_string(s.T) + "]");
}

// Closed-form noising: R_t = sqrt(abar_t) R0 + sqrt(1 - abar_t) eps.
inline Tensor q_sample(const Tensor& r0, int t, const Tensor& eps,
                       const NoiseSchedule& s) {
    check_timestep(t, s, "q_sample");
    if (eps.shape() != r0.shape())
        throw std::invalid_argument("q_sample: eps shape mismatch");
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    return r0 * std::sqrt(ab) + eps * std::sqrt(1.0 - ab);
}

// One reverse step: mean (1/sqrt(alpha_t)) (R_t - beta_t/sqrt(1-abar_t) eps)
// plus sqrt(beta_tilde_t) z for t > 1 (the final step is deterministic).
inline Tensor p_sample_step(const Tensor& r_t, const Tensor& eps_hat, int t,
                            const NoiseSchedule& s, Rng& rng) {
    check_timestep(t, s, "p_sample_step");
    if (eps_hat.shape() != r_t.shape())
        throw std::invalid_argument("p_sample_step: eps shape mismatch");
    const double beta = s.beta[static_cast<std::size_t>(t)];
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    const double inv_sqrt_alpha =
        1.0 / std::sqrt(s.alpha[static_cast<std::size_t>(t)]);
    Tensor mean = (r_t - eps_hat * (beta / std::sqrt(1.0 - ab))) *
                  inv_sqrt_alpha;
    if (t == 1) return mean;
    const double sd = std::sqrt(s.beta_tilde[static_cast<std::size_t>(t)]);
    Tensor z = normal_init(r_t.shape(), 1.0, rng, false);
    return mean + z * sd;
}

// Direct clean estimate R0 ~= (R_t - sqrt(1-abar_t) eps) / sqrt(abar_t);
// exact inverse of q_sample when eps is the true noise.
inline Tensor one_step_generate(const Tensor& r_t, const Tensor& eps_hat,
                                int t, const NoiseSchedule& s) {
    check_timestep(t, s, "one_step_generate");
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    return (r_t - eps_hat * std::sqrt(1.0 - ab)) * (1.0 / std::sqrt(ab));
}

inline Tensor loss_smg(const Tensor& eps, const Tensor& eps_hat) {
    if (eps.shape() != eps_hat.shape())
        throw std::invalid_argument("loss_smg: shape mismatch");
    Tensor d = eps - eps_hat;
    return mean(d * d);
}

// ---------------------------------------------------------------------------
// denoiser
// ---------------------------------------------------------------------------

struct SmgConfig {
    std::vector<std::int64_t> channels{32, 64, 128};  // 3 U-levels
    std::int64_t time_dim = 128;
    std::int64_t weather_dim = 64;
    std::int64_t cond_dim = 32;
    std::int64_t spider_embed = 8;
    std::int64_t spider_state = 4;
    std::int64_t spider_layers = 2;

    static SmgConfig toy() {
        SmgConfig c;
        c.channels = {4, 4, 8};
        c.cond_dim = 16;
        c.spider_embed = 2;
        c.spider_state = 2;
        c.spider_layers = 1;
        return c;
    }

    void validate() const {
        if (channels.size() != 3)
            throw std::invalid_argument("SmgConfig: need exactly 3 levels");
        for (auto c : channels)
            if (c < 4 || c % 4 != 0)
                throw std::invalid_argument(
                    "SmgConfig: channels must be positive multiples of 4");
        if (time_dim < 2 || time_dim % 2 != 0)
            throw std::invalid_argument("SmgConfig: time_dim must be even");
        if (weather_dim < 1 || cond_dim < 1)
            throw std::invalid_argument("SmgConfig: bad embedding dims");
    }
};

namespace detail {

inline Tensor chw_to_jc(const Tensor& x) {
    const std::int64_t c = x.shape()[0], j = x.shape()[1] * x.shape()[2];
    return transpose2d(reshape(x, {c, j}));
}

inline Tensor jc_to_chw(const Tensor& x, std::int64_t h, std::int64_t w) {
    return reshape(transpose2d(x), {x.shape()[1], h, w});
}

}  // namespace detail

// One U-level: residual conv block with conditioning injected by
// broadcasting the fused vector as extra channels merged through a 1x1
// convolution, followed by a spider mamba block along this level's axis.
class SmgLevel {
public:
    SmgLevel(ParamStore& ps, const std::string& prefix, std::int64_t ch,
             std::int64_t cond_dim, const SpiderConfig& scfg,
             ScanDirection dir)
        : conv_(ps, prefix + ".conv", ch, ch, 3),
          norm_g_(ones_param(ps, prefix + ".norm.g", {ch})),
          norm_b_(ps.get_or_create(prefix + ".norm.b", {ch}, 0)),
          fuse_(ps, prefix + ".fuse", ch + cond_dim, ch, 1),
          spider_(ps, prefix + ".spider", scfg, dir),
          ch_(ch),
          cond_dim_(cond_dim) {}

    Tensor forward(const Tensor& x, const Tensor& cond) const {
        const std::int64_t h = x.shape()[1], w = x.shape()[2];
        Tensor y = silu(instance_norm(conv_.forward(x), norm_g_, norm_b_));
        Tensor tile = tile_channels(cond, h, w);
        y = fuse_.forward(concat({y, tile}, 0)) + x;
        Tensor jc = spider_.forward(detail::chw_to_jc(y), h, w);
        return detail::jc_to_chw(jc, h, w);
    }

private:
    Conv2d conv_;
    Tensor norm_g_, norm_b_;
    Conv2d fuse_;
    SpiderMambaBlock spider_;
    std::int64_t ch_, cond_dim_;
};

// The SMG denoiser: 3-level U-shape over (2, H, W) normalized maps. Level 0
// runs at full resolution, level 1 after a (2,2) strided downsample, and the
// bottleneck after a further azimuth-only (1,2) downsample, preserving the
// beam-row structure. The output convolution is zero-initialized so an
// untrained net predicts zero noise.
class SmgNet {
public:
    SmgNet(ParamStore& ps, const std::string& prefix, const SmgConfig& cfg)
        : cfg_(validated(cfg)),
          time_lin_(ps, prefix + ".time", cfg.time_dim, cfg.time_dim),
          fuser_(ps, prefix + ".cond", cfg.time_dim, cfg.weather_dim,
                 cfg.cond_dim),
          null_w_(ps.get_or_create(prefix + ".null_w", {cfg.weather_dim}, 0)),
          in_conv_(ps, prefix + ".in", 2, cfg.channels[0], 3),
          enc0_(ps, prefix + ".enc0", cfg.channels[0], cfg.cond_dim,
                spider(cfg, 0), ScanDirection::row_forward),
          down01_(ps, prefix + ".down01", cfg.channels[0], cfg.channels[1], 3,
                  2, 2),
          enc1_(ps, prefix + ".enc1", cfg.channels[1], cfg.cond_dim,
                spider(cfg, 1), ScanDirection::col_forward),
          down12_(ps, prefix + ".down12", cfg.channels[1], cfg.channels[2], 3,
                  1, 2),
          mid_(ps, prefix + ".mid", cfg.channels[2], cfg.cond_dim,
               spider(cfg, 2), ScanDirection::row_forward),
          up1_(ps, prefix + ".up1", cfg.channels[2], cfg.channels[1], 1),
          skip1_(ps, prefix + ".skip1", 2 * cfg.channels[1], cfg.channels[1],
                 3),
          dec1_(ps, prefix + ".dec1", cfg.channels[1], cfg.cond_dim,
                spider(cfg, 1), ScanDirection::col_forward),
          up0_(ps, prefix + ".up0", cfg.channels[1], cfg.channels[0], 1),
          skip0_(ps, prefix + ".skip0", 2 * cfg.channels[0], cfg.channels[0],
                 3),
          dec0_(ps, prefix + ".dec0", cfg.channels[0], cfg.cond_dim,
                spider(cfg, 0), ScanDirection::row_forward),
          out_conv_(ps, prefix + ".out", cfg.channels[0], 2, 3, 1, 1,
                    /*zero_init=*/true) {}

    // w == nullptr selects the learned null-weather embedding
    // (unconditional mode is the conditional path with that substitution).
    Tensor forward(const Tensor& r_t, int t, const Tensor* w = nullptr) const {
        if (r_t.shape().size() != 3 || r_t.shape()[0] != 2)
            throw std::invalid_argument("SmgNet: expected (2, H, W) input");
        const std::int64_t h = r_t.shape()[1], wd = r_t.shape()[2];
        if (h % 2 != 0 || wd % 4 != 0 || h < 4 || wd < 8)
            throw std::invalid_argument(
                "SmgNet: H must be even and W divisible by 4");
        if (w && w->shape() != Shape{cfg_.weather_dim})
            throw std::invalid_argument("SmgNet: weather dim mismatch");
        Tensor te = time_embedding(t, cfg_.time_dim);
        Tensor th = reshape(
            silu(time_lin_.forward(reshape(te, {1, cfg_.time_dim}))),
            {cfg_.time_dim});
        Tensor cond = fuser_.forward(th, w ? *w : null_w_);

        Tensor x0 = in_conv_.forward(r_t);
        Tensor e0 = enc0_.forward(x0, cond);
        Tensor e1 = enc1_.forward(down01_.forward(e0), cond);
        Tensor m = mid_.forward(down12_.forward(e1), cond);
        Tensor u1 = up1_.forward(upsample_nearest(m, 1, 2));
        Tensor d1 = dec1_.forward(skip1_.forward(concat({u1, e1}, 0)), cond);
        Tensor u0 = up0_.forward(upsample_nearest(d1, 2, 2));
        Tensor d0 = dec0_.forward(skip0_.forward(concat({u0, e0}, 0)), cond);
        return out_conv_.forward(d0);
    }

    const SmgConfig& config() const { return cfg_; }

private:
    static const SmgConfig& validated(const SmgConfig& c) {
        c.validate();
        return c;
    }
    static SpiderConfig spider(const SmgConfig& c, int level) {
        SpiderConfig s;
        s.channels = c.channels[static_cast<std::size_t>(level)];
        s.embed_dim = c.spider_embed;
        s.state_dim = c.spider_state;
        s.layers = c.spider_layers;
        return s;
    }

    SmgConfig cfg_;
    Linear time_lin_;
    ConditionFuser fuser_;
    Tensor null_w_;
    Conv2d in_conv_;
    SmgLevel enc0_;
    Conv2d down01_;
    SmgLevel enc1_;
    Conv2d down12_;
    SmgLevel mid_;
    Conv2d up1_;
    Conv2d skip1_;
    SmgLevel dec1_;
    Conv2d up0_;
    Conv2d skip0_;
    SmgLevel dec0_;
    Conv2d out_conv_;
};

inline Tensor smg_forward(const SmgNet& net, const Tensor& r_t, int t,
                          const Tensor* w = nullptr) {
    return net.forward(r_t, t, w);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

// Everything learnable plus the frozen anchors, over one shared ParamStore.
struct Pipeline {
    ParamStore ps;
    SmgConfig cfg;
    SmgNet smg;
    WeatherEncoder wenc;
    GaussianHead head;
    AnchorSet anchors;
    ClcConfig clc;
    Tensor m_d;  // the learnable additive weather mask, shape (H, W)

    static constexpr const char* kMaskName = "mdp.m_d";

    Pipeline(std::uint64_t seed, const SmgConfig& config, std::int64_t h,
             std::int64_t w, AnchorSet anchor_set = {})
        : ps(seed),
          cfg(config),
          smg(ps, "smg", config),
          wenc(ps, "wenc", config.weather_dim),
          head(ps, "lfa", 2, 32),
          anchors(anchor_set.vectors[0].empty()
                      ? make_default_anchors(config.weather_dim)
                      : std::move(anchor_set)),
          clc(),
          m_d(ps.get_or_create(kMaskName, {h, w}, 0)) {
        if (anchors.dim != cfg.weather_dim)
            throw std::invalid_argument(
                "Pipeline: anchor dim does not match weather_dim");
    }
};

struct LossBreakdown {
    double smg = 0, lfa = 0, clc = 0;
    double total() const { return smg + lfa + clc; }
};

// One optimization step of L = L_SMG + L_LFA + L_CLC over a batch of clear
// maps. Per sample: corrupt with the weather preset (through the learnable
// mask), normalize, noise at a uniform timestep, denoise conditioned on the
// weather embedding, then add the alignment and contrastive terms. The LFA
// "real" branch pairs each sample with the next same-kind corrupted map in
// the batch (cycled), standing in for a real-weather sample at toy scale.
inline LossBreakdown train_step(Pipeline& p,
                                const std::vector<RangeMap>& batch,
                                const std::vector<WeatherKind>& kinds,
                                const NoiseSchedule& sched, Rng& rng,
                                Adam& opt,
                                double lfa_weight = 1.0,
                                double clc_weight = 1.0) {
    if (batch.empty() || batch.size() != kinds.size())
        throw std::invalid_argument("train_step: bad batch");
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    // corrupt every sample first so LFA can pair within the batch
    std::vector<Tensor> corrupted;
    corrupted.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        WeatherParams wp = WeatherParams::preset(kinds[i]);
        corrupted.push_back(
            apply_mdp(batch[i], wp, rng, p.m_d).normalized);
    }
    std::vector<std::size_t> pair_idx(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        pair_idx[i] = i;
        for (std::size_t k = 1; k <= batch.size(); ++k) {
            const std::size_t j = (i + k) % batch.size();
            if (kinds[j] == kinds[i]) {
                pair_idx[i] = j;
                break;
            }
        }
    }

    Tensor l_smg = Tensor::scalar(0.0);
    Tensor l_lfa = Tensor::scalar(0.0);
    Tensor l_clc = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Tensor& r_w0 = corrupted[i];
        const int t = 1 + static_cast<int>(rng.uniform_index(
                              static_cast<std::size_t>(sched.T)));
        Tensor eps = normal_init(r_w0.shape(), 1.0, rng, false);
        Tensor r_t = q_sample(r_w0, t, eps, sched);
        Tensor w = p.wenc.forward(r_w0);
        Tensor eps_hat = p.smg.forward(r_t, t, &w);
        l_smg = l_smg + loss_smg(eps, eps_hat);
        if (lfa_weight != 0.0) {
            // clamp the one-step reconstruction to the normalized map box:
            // at high t the 1/sqrt(alpha_bar) amplification would otherwise
            // feed unbounded early-training garbage into the alignment head
            Tensor r_gen =
                clamp(one_step_generate(r_t, eps_hat, t, sched), -1.0, 1.0);
            l_lfa = l_lfa +
                    lfa_loss(r_gen, corrupted[pair_idx[i]], p.head) *
                        lfa_weight;
        }
        if (clc_weight != 0.0)
            l_clc = l_clc + ib_loss(w, p.anchors, kinds[i], p.clc) * clc_weight;
    }
    l_smg = l_smg * inv_n;
    l_lfa = l_lfa * inv_n;
    l_clc = l_clc * inv_n;
    // small L2 pull on the learnable mask keeps the residual near zero
    Tensor total = l_smg + l_lfa + l_clc + sum(p.m_d * p.m_d) * 1e-4;

    p.ps.zero_grad();
    backward(total);
    opt.step(p.ps);
    return {l_smg.item(), l_lfa.item(), l_clc.item()};
}

// Fine-tuning: identical objective, but R_w0 comes straight from a corpus of
// real (or held-out simulated) weather maps, bypassing the MDP; the MDP mask
// is frozen — every other parameter updates.
inline LossBreakdown fine_tune_step(
    Pipeline& p, const std::vector<RangeMap>& real_batch,
    const std::vector<WeatherKind>& kinds, const NoiseSchedule& sched,
    Rng& rng, Adam& opt) {
    if (real_batch.empty() || real_batch.size() != kinds.size())
        throw std::invalid_argument("fine_tune_step: empty corpus batch");
    const double inv_n = 1.0 / static_cast<double>(real_batch.size());

    Tensor total = Tensor::scalar(0.0);
    LossBreakdown out;
    std::vector<Tensor> maps;
    maps.reserve(real_batch.size());
    for (const auto& rm : real_batch) maps.push_back(normalize(rm));
    for (std::size_t i = 0; i < real_batch.size(); ++i) {
        const Tensor& r_w0 = maps[i];
        const int t = 1 + static_cast<int>(rng.uniform_index(
                              static_cast<std::size_t>(sched.T)));
        Tensor eps = normal_init(r_w0.shape(), 1.0, rng, false);
        Tensor r_t = q_sample(r_w0, t, eps, sched);
        Tensor w = p.wenc.forward(r_w0);
        Tensor eps_hat = p.smg.forward(r_t, t, &w);
        Tensor smg = loss_smg(eps, eps_hat);
        Tensor r_gen =
            clamp(one_step_generate(r_t, eps_hat, t, sched), -1.0, 1.0);
        Tensor lfa =
            lfa_loss(r_gen, maps[(i + 1) % maps.size()], p.head);
        Tensor clc = ib_loss(w, p.anchors, kinds[i], p.clc);
        out.smg += smg.item() * inv_n;
        out.lfa += lfa.item() * inv_n;
        out.clc += clc.item() * inv_n;
        total = total + (smg + lfa + clc) * inv_n;
    }
    p.ps.zero_grad();
    backward(total);
    opt.step(p.ps, {Pipeline::kMaskName});
    return out;
}

// Validation loss (no parameter update): L_SMG on given maps at seeded
// timesteps/noise.
inline double eval_smg_loss(const Pipeline& p,
                            const std::vector<RangeMap>& maps,
                            const std::vector<WeatherKind>& kinds,
                            const NoiseSchedule& sched, Rng& rng) {
    if (maps.empty()) throw std::invalid_argument("eval_smg_loss: empty set");
    NoGradGuard ng;
    double acc = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        Tensor r_w0 = normalize(maps[i]);
        const int t = 1 + static_cast<int>(rng.uniform_index(
                              static_cast<std::size_t>(sched.T)));
        Tensor eps = normal_init(r_w0.shape(), 1.0, rng, false);
        Tensor r_t = q_sample(r_w0, t, eps, sched);
        Tensor w = p.wenc.forward(r_w0);
        acc += loss_smg(eps, p.smg.forward(r_t, t, &w)).item();
    }
    return acc / static_cast<double>(maps.size());
}

// Full reverse chain from pure noise; w == nullptr is unconditional.
inline Tensor sample(const SmgNet& net, const NoiseSchedule& sched,
                     const Tensor* w, std::int64_t h, std::int64_t wd,
                     Rng& rng) {
    NoGradGuard ng;
    Tensor x = normal_init({2, h, wd}, 1.0, rng, false);
    for (int t = sched.T; t >= 1; --t) {
        Tensor eps_hat = net.forward(x, t, w);
        x = p_sample_step(x, eps_hat, t, sched, rng);
    }
    return x;
}

}  // namespace squall
