// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy scene generator: a ground plane, a handful of axis-aligned boxes, and
// an optional wall, rendered to range maps by ray-casting every pixel ray of
// the sensor profile. Deterministic per (seed, frame index), structured
// enough that a denoiser has real signal to learn.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "squall/geometry.hpp"
#include "squall/rng.hpp"

namespace squall {

struct ToyBox {
    double lo[3];
    double hi[3];
};

struct ToyScene {
    double ground_z = -1.7;
    std::vector<ToyBox> boxes;
    bool has_wall = false;
    double wall_distance = 0.0;  // along +x, facing the sensor
};

struct ToyDatasetSpec {
    std::size_t frames = 512;
    double ground_z = -1.7;
    int min_boxes = 3;
    int max_boxes = 10;
    double min_size = 1.0;
    double max_size = 4.0;
    double wall_probability = 0.5;
    double spawn_radius = 40.0;  // boxes land within this ring
    std::uint64_t seed = 0;

    void validate() const {
        if (min_boxes < 0 || max_boxes < min_boxes)
            throw std::invalid_argument("ToyDatasetSpec: bad box count range");
        if (min_size <= 0 || max_size < min_size)
            throw std::invalid_argument("ToyDatasetSpec: bad box size range");
        if (wall_probability < 0 || wall_probability > 1)
            throw std::invalid_argument(
                "ToyDatasetSpec: wall probability out of [0,1]");
        if (spawn_radius <= 0)
            throw std::invalid_argument("ToyDatasetSpec: bad spawn radius");
    }
};

namespace detail {

// Slab-method ray/AABB intersection from the origin; returns the nearest
// positive hit distance or +inf.
inline double ray_box(const Point& dir, const ToyBox& box) {
    double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
    const double d[3] = {dir.x, dir.y, dir.z};
    for (int axis = 0; axis < 3; ++axis) {
        if (std::fabs(d[axis]) < 1e-12) {
            if (0.0 < box.lo[axis] || 0.0 > box.hi[axis])
                return std::numeric_limits<double>::infinity();
            continue;
        }
        double t0 = box.lo[axis] / d[axis];
        double t1 = box.hi[axis] / d[axis];
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return std::numeric_limits<double>::infinity();
    }
    return tmin > 0.0 ? tmin : std::numeric_limits<double>::infinity();
}

}  // namespace detail

inline ToyScene make_toy_scene(const ToyDatasetSpec& spec,
                               std::uint64_t frame_index) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, frame_index));
    ToyScene scene;
    scene.ground_z = spec.ground_z;
    const int n_boxes =
        spec.min_boxes +
        static_cast<int>(rng.uniform_index(
            static_cast<std::uint64_t>(spec.max_boxes - spec.min_boxes + 1)));
    for (int b = 0; b < n_boxes; ++b) {
        const double angle = rng.uniform(0.0, 2.0 * detail::kPi);
        const double dist = rng.uniform(4.0, spec.spawn_radius);
        const double cx = dist * std::cos(angle);
        const double cy = dist * std::sin(angle);
        const double sx = rng.uniform(spec.min_size, spec.max_size);
        const double sy = rng.uniform(spec.min_size, spec.max_size);
        const double sz = rng.uniform(spec.min_size, spec.max_size);
        ToyBox box;
        box.lo[0] = cx - sx / 2;
        box.hi[0] = cx + sx / 2;
        box.lo[1] = cy - sy / 2;
        box.hi[1] = cy + sy / 2;
        box.lo[2] = spec.ground_z;
        box.hi[2] = spec.ground_z + sz;
        scene.boxes.push_back(box);
    }
    if (rng.bernoulli(spec.wall_probability)) {
        scene.has_wall = true;
        scene.wall_distance = rng.uniform(20.0, spec.spawn_radius + 20.0);
    }
    return scene;
}

// Nearest surface hit along one pixel ray, or 0 (invalid) past max range.
// The second output is a surface tag driving the intensity channel.
inline std::pair<double, double> cast_ray(const ToyScene& scene,
                                          const Point& dir, double max_range) {
    double best = std::numeric_limits<double>::infinity();
    double intensity = 0.0;
    if (dir.z < -1e-12) {
        const double t = scene.ground_z / dir.z;
        if (t > 0 && t < best) {
            best = t;
            intensity = 0.3;
        }
    }
    for (const ToyBox& box : scene.boxes) {
        const double t = detail::ray_box(dir, box);
        if (t < best) {
            best = t;
            intensity = 0.6;
        }
    }
    if (scene.has_wall && dir.x > 1e-12) {
        const double t = scene.wall_distance / dir.x;
        if (t > 0 && t < best) {
            best = t;
            intensity = 0.5;
        }
    }
    if (!std::isfinite(best) || best > max_range) return {0.0, 0.0};
    return {best, intensity};
}

inline RangeMap render_toy_scene(const ToyScene& scene,
                                 const SensorConfig& cfg) {
    cfg.validate();
    RangeMap rm(cfg);
    for (int r = 0; r < cfg.height; ++r)
        for (int c = 0; c < cfg.width; ++c) {
            const Point dir = pixel_ray(cfg, r, c);
            auto [depth, inten] = cast_ray(scene, dir, cfg.max_range);
            const std::size_t idx =
                static_cast<std::size_t>(r) * cfg.width + c;
            rm.depth[idx] = depth;
            rm.intensity[idx] = inten;
        }
    return rm;
}

inline RangeMap toy_frame(const ToyDatasetSpec& spec, const SensorConfig& cfg,
                          std::uint64_t frame_index) {
    return render_toy_scene(make_toy_scene(spec, frame_index), cfg);
}

inline std::vector<RangeMap> toy_dataset(const ToyDatasetSpec& spec,
                                         const SensorConfig& cfg) {
    std::vector<RangeMap> out;
    out.reserve(spec.frames);
    for (std::uint64_t i = 0; i < spec.frames; ++i)
        out.push_back(toy_frame(spec, cfg, i));
    return out;
}

}  // namespace squall
