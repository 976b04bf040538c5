// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// Distributional metrics between generated and reference frame sets:
// Jensen-Shannon divergence over BEV occupancy distributions, Gaussian-kernel
// maximum mean discrepancy over per-frame occupancy vectors, and a pooled
// depth-histogram JSD diagnostic. All values in nats.

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "squall/geometry.hpp"

namespace squall {

struct BevDistribution {
    int cells = 0;
    double extent = 100.0;
    double cell = 1.0;
    std::vector<double> frequency;  // per-cell occupancy rate in [0,1]
    std::size_t frames = 0;
};

inline BevDistribution bev_distribution(const std::vector<PointCloud>& clouds,
                                        double extent = 100.0,
                                        double cell = 1.0) {
    if (clouds.empty())
        throw std::invalid_argument("bev_distribution: empty frame set");
    BevDistribution d;
    d.extent = extent;
    d.cell = cell;
    d.frames = clouds.size();
    for (const auto& c : clouds) {
        BEVGrid g = bev_occupancy(c, extent, cell);
        if (d.frequency.empty()) {
            d.cells = g.cells;
            d.frequency.assign(g.occupancy.size(), 0.0);
        }
        for (std::size_t i = 0; i < g.occupancy.size(); ++i)
            d.frequency[i] += g.occupancy[i];
    }
    const double inv = 1.0 / static_cast<double>(d.frames);
    for (auto& f : d.frequency) f *= inv;
    return d;
}

// Jensen-Shannon divergence in nats between two nonnegative vectors;
// inputs are epsilon-smoothed and renormalized, so any nonnegative weight
// vector works. Bounded by ln 2.
inline double jsd(const std::vector<double>& p_in,
                  const std::vector<double>& q_in, double eps = 1e-12) {
    if (p_in.size() != q_in.size() || p_in.empty())
        throw std::invalid_argument("jsd: size mismatch or empty input");
    std::vector<double> p(p_in), q(q_in);
    for (auto* v : {&p, &q}) {
        double total = 0.0;
        for (auto& x : *v) {
            if (x < 0)
                throw std::invalid_argument("jsd: negative probability mass");
            x += eps;
            total += x;
        }
        for (auto& x : *v) x /= total;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        acc += 0.5 * p[i] * std::log(p[i] / m) +
               0.5 * q[i] * std::log(q[i] / m);
    }
    return std::max(0.0, acc);
}

inline double jsd(const BevDistribution& a, const BevDistribution& b) {
    return jsd(a.frequency, b.frequency);
}

namespace detail {

inline double sq_dist(const std::vector<double>& a,
                      const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace detail

// Unbiased squared maximum-mean-discrepancy estimate with a Gaussian kernel
// k(x,y) = exp(-||x-y||^2 / (2 h^2)), bandwidth h = median pairwise distance
// over the pooled sets (fallback 1.0 when all samples coincide). May be
// slightly negative — that's the unbiased estimator, not a bug.
inline double mmd(const std::vector<std::vector<double>>& a,
                  const std::vector<std::vector<double>>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw std::invalid_argument("mmd: need at least 2 frames per set");
    const std::size_t dim = a[0].size();
    for (const auto* s : {&a, &b})
        for (const auto& v : *s)
            if (v.size() != dim)
                throw std::invalid_argument("mmd: inconsistent vector dims");

    std::vector<const std::vector<double>*> pooled;
    for (const auto& v : a) pooled.push_back(&v);
    for (const auto& v : b) pooled.push_back(&v);
    std::vector<double> dists;
    dists.reserve(pooled.size() * (pooled.size() - 1) / 2);
    for (std::size_t i = 0; i < pooled.size(); ++i)
        for (std::size_t j = i + 1; j < pooled.size(); ++j)
            dists.push_back(std::sqrt(detail::sq_dist(*pooled[i], *pooled[j])));
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2,
                     dists.end());
    double h = dists[dists.size() / 2];
    if (h <= 0.0) h = 1.0;  // degenerate pooled set
    const double gamma = 1.0 / (2.0 * h * h);

    auto kern = [&](const std::vector<double>& x, const std::vector<double>& y) {
        return std::exp(-gamma * detail::sq_dist(x, y));
    };
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    double kaa = 0.0, kbb = 0.0, kab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j)
            if (i != j) kaa += kern(a[i], a[j]);
    for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            if (i != j) kbb += kern(b[i], b[j]);
    // Equal-size sets use the paired estimator (cross diagonal excluded) so
    // mmd(S, S) is exactly zero; otherwise fall back to the full cross sum.
    double cross = 0.0;
    if (a.size() == b.size()) {
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j)
                if (i != j) kab += kern(a[i], b[j]);
        cross = 2.0 * kab / (na * (na - 1.0));
    } else {
        for (const auto& x : a)
            for (const auto& y : b) kab += kern(x, y);
        cross = 2.0 * kab / (na * nb);
    }
    return kaa / (na * (na - 1.0)) + kbb / (nb * (nb - 1.0)) - cross;
}

// Per-frame binary occupancy vectors, the sample representation mmd runs on.
inline std::vector<std::vector<double>> occupancy_vectors(
    const std::vector<PointCloud>& clouds, double extent = 100.0,
    double cell = 1.0) {
    std::vector<std::vector<double>> out;
    out.reserve(clouds.size());
    for (const auto& c : clouds) {
        BEVGrid g = bev_occupancy(c, extent, cell);
        out.emplace_back(g.occupancy.begin(), g.occupancy.end());
    }
    return out;
}

// JSD between pooled valid-pixel depth histograms of two range-map sets; a
// cheap stand-in for feature-space distances.
inline double range_histogram_jsd(const std::vector<RangeMap>& a,
                                  const std::vector<RangeMap>& b, int bins) {
    if (a.empty() || b.empty() || bins < 1)
        throw std::invalid_argument("range_histogram_jsd: bad input");
    auto histogram = [bins](const std::vector<RangeMap>& maps) {
        std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
        for (const auto& rm : maps) {
            const double top = rm.config.max_range;
            for (std::size_t i = 0; i < rm.size(); ++i) {
                if (!rm.valid(i)) continue;
                int bin = static_cast<int>(rm.depth[i] / top * bins);
                bin = std::clamp(bin, 0, bins - 1);
                h[static_cast<std::size_t>(bin)] += 1.0;
            }
        }
        return h;
    };
    return jsd(histogram(a), histogram(b));
}

}  // namespace squall
