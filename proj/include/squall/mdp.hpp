// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// Map-based data producer: turns clear-weather range maps into corrupted
// ones via distance attenuation, Bernoulli dropping, injected noise returns,
// and a learnable additive residual mask on the normalized depth channel.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "squall/geometry.hpp"
#include "squall/rng.hpp"
#include "squall/tensor.hpp"

namespace squall {

enum class WeatherKind { clear = 0, snow = 1, fog = 2, rain = 3 };

inline const char* weather_name(WeatherKind k) {
    switch (k) {
        case WeatherKind::clear: return "clear";
        case WeatherKind::snow: return "snow";
        case WeatherKind::fog: return "fog";
        case WeatherKind::rain: return "rain";
    }
    throw std::invalid_argument("unknown weather kind");
}

inline WeatherKind weather_from_name(const std::string& name) {
    if (name == "clear") return WeatherKind::clear;
    if (name == "snow") return WeatherKind::snow;
    if (name == "fog") return WeatherKind::fog;
    if (name == "rain") return WeatherKind::rain;
    throw std::invalid_argument("unknown weather kind '" + name + "'");
}

inline const std::vector<WeatherKind>& all_weather_kinds() {
    static const std::vector<WeatherKind> kinds = {
        WeatherKind::clear, WeatherKind::snow, WeatherKind::fog,
        WeatherKind::rain};
    return kinds;
}

inline const std::vector<WeatherKind>& adverse_weather_kinds() {
    static const std::vector<WeatherKind> kinds = {
        WeatherKind::snow, WeatherKind::fog, WeatherKind::rain};
    return kinds;
}

struct WeatherParams {
    WeatherKind kind = WeatherKind::clear;
    double r_w = 1e6;     // severity radius in meters; smaller = harsher
    double q_near = 1.0;  // keep probability for d < r_w
    double q_far = 1.0;   // keep probability for d >= r_w
    double kappa = 0.0;   // noise_count = kappa * max_range / r_w
    double noise_intensity_max = 0.0;

    double noise_count(double max_range) const {
        return kappa <= 0.0 ? 0.0 : kappa * max_range / r_w;
    }

    void validate() const {
        if (!(r_w > 0)) throw std::invalid_argument("WeatherParams: r_w must be positive");
        if (q_near < 0 || q_near > 1 || q_far < 0 || q_far > q_near)
            throw std::invalid_argument(
                "WeatherParams: need 0 <= q_far <= q_near <= 1");
        if (kappa < 0) throw std::invalid_argument("WeatherParams: kappa must be >= 0");
    }

    static WeatherParams preset(WeatherKind kind) {
        switch (kind) {
            case WeatherKind::clear:
                return {WeatherKind::clear, 1e6, 1.0, 1.0, 0.0, 0.0};
            case WeatherKind::snow:
                return {WeatherKind::snow, 40.0, 0.95, 0.7, 60.0, 0.4};
            case WeatherKind::fog:
                return {WeatherKind::fog, 25.0, 0.9, 0.2, 120.0, 0.3};
            case WeatherKind::rain:
                return {WeatherKind::rain, 50.0, 0.97, 0.6, 30.0, 0.25};
        }
        throw std::invalid_argument("unknown weather kind");
    }
};

// ---------------------------------------------------------------------------
// pipeline stages
// ---------------------------------------------------------------------------

/// Distance attenuation: 1 iff the pixel is a valid return within r_w.
inline std::vector<std::uint8_t> attenuation_mask(
    const std::vector<double>& depth, double r_w) {
    if (!(r_w > 0)) throw std::invalid_argument("attenuation_mask: r_w must be positive");
    std::vector<std::uint8_t> mask(depth.size());
    for (std::size_t i = 0; i < depth.size(); ++i)
        mask[i] = depth[i] > 0.0 && depth[i] <= r_w;
    return mask;
}

/// Bernoulli keep per pixel; q_near below r_w, q_far at or beyond. One
/// uniform draw is consumed for EVERY pixel so that the surviving set is
/// monotone in r_w under a fixed seed.
inline std::vector<std::uint8_t> bdf_drop(const std::vector<std::uint8_t>& mask,
                                          double q_near, double q_far,
                                          const std::vector<double>& depth,
                                          double r_w, Rng& rng) {
    if (q_near < 0 || q_near > 1 || q_far < 0 || q_far > 1)
        throw std::invalid_argument("bdf_drop: probabilities must be in [0,1]");
    std::vector<std::uint8_t> out(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const double u = rng.uniform();
        const double q = depth[i] < r_w ? q_near : q_far;
        out[i] = mask[i] && u < q;
    }
    return out;
}

struct NoiseMap {
    std::vector<double> depth;      // 0 where no injected return
    std::vector<double> intensity;  // 0 where no injected return
    std::size_t injected = 0;
};

/// Sparse spurious returns: Poisson-many pixels, each with depth in
/// [1, r_w] and a small random intensity.
inline NoiseMap weather_noise(const WeatherParams& params,
                              const SensorConfig& cfg, Rng& rng) {
    params.validate();
    const std::size_t n = static_cast<std::size_t>(cfg.height) * cfg.width;
    NoiseMap nm;
    nm.depth.assign(n, 0.0);
    nm.intensity.assign(n, 0.0);
    const double mean = params.noise_count(cfg.max_range);
    const std::uint64_t count = rng.poisson(mean);
    const double d_hi = std::min(params.r_w, cfg.max_range);
    const double d_lo = std::min(1.0, d_hi);
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::size_t idx = static_cast<std::size_t>(rng.uniform_index(n));
        const double d = rng.uniform(d_lo, d_hi);
        const double inten = rng.uniform(0.0, params.noise_intensity_max);
        if (nm.depth[idx] == 0.0) ++nm.injected;
        nm.depth[idx] = d;
        nm.intensity[idx] = inten;
    }
    return nm;
}

// ---------------------------------------------------------------------------
// full producer
// ---------------------------------------------------------------------------

struct MdpResult {
    Tensor normalized;          // (2,H,W), differentiable through the mask
    RangeMap map;               // concrete corrupted map
    std::size_t survivors = 0;  // original pixels kept
    std::size_t injected = 0;   // noise pixels added
};

/// Eq.-style pipeline: depth * attenuation * Bernoulli keep, noise returns
/// overwrite their pixels, and the learnable mask adds in normalized depth
/// space. `residual_mask`, when defined, must be an (H,W) tensor; gradients
/// flow through it and nothing else.
inline MdpResult apply_mdp(const RangeMap& rm, const WeatherParams& params,
                           Rng& rng, const Tensor& residual_mask = {}) {
    params.validate();
    const SensorConfig& cfg = rm.config;
    const std::size_t n = rm.size();

    auto att = attenuation_mask(rm.depth, params.r_w);
    auto kept = bdf_drop(att, params.q_near, params.q_far, rm.depth,
                         params.r_w, rng);
    NoiseMap nm = weather_noise(params, cfg, rng);

    MdpResult res;
    res.map = RangeMap(cfg);
    for (std::size_t i = 0; i < n; ++i) {
        if (kept[i]) {
            res.map.depth[i] = rm.depth[i];
            res.map.intensity[i] = rm.intensity[i];
            ++res.survivors;
        }
        if (nm.depth[i] > 0.0) {  // noise overwrites, also refills drops
            res.map.depth[i] = nm.depth[i];
            res.map.intensity[i] = nm.intensity[i];
        }
    }
    res.injected = nm.injected;

    Tensor base = normalize(res.map);
    if (!residual_mask.defined()) {
        res.normalized = base;
        return res;
    }
    if (residual_mask.shape() != Shape{cfg.height, cfg.width})
        throw std::invalid_argument("apply_mdp: residual mask shape " +
                                    shape_str(residual_mask.shape()) +
                                    " does not match map");

    // additive residual on the normalized depth channel only
    Tensor depth_chan =
        reshape(slice(base, 0, 0, 1), {cfg.height, cfg.width});
    Tensor inten_chan = slice(base, 0, 1, 1);
    Tensor adjusted = clamp(depth_chan + residual_mask, -1.0, 1.0);
    res.normalized = concat(
        {reshape(adjusted, {1, cfg.height, cfg.width}), inten_chan}, 0);

    // concrete map follows the adjusted tensor, but pixels the mask leaves
    // untouched keep their exact raw values
    const auto& mv = residual_mask.data();
    const auto& av = res.normalized.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (mv[i] == 0.0) continue;
        const double d = denormalize_depth(av[i], cfg.max_range);
        res.map.depth[i] = d;
        res.map.intensity[i] =
            d > 0.0 ? std::clamp((av[n + i] + 1.0) * 0.5, 0.0, 1.0) : 0.0;
    }
    return res;
}

/// Projection of the learnable mask back to its box after an optimizer step.
inline void clamp_residual_mask(Tensor& mask, double bound = 0.5) {
    for (double& m : mask.mutable_data())
        m = std::clamp(m, -bound, bound);
}

}  // namespace squall
