// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// Point cloud <-> range map conversion, normalization to the [-1,1] tensor
// form the diffusion model consumes, BEV occupancy, and the on-disk formats
// (KITTI-style .bin clouds, range-map blob + JSON sidecar).

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "squall/tensor.hpp"

namespace squall {

struct Point {
    double x = 0, y = 0, z = 0, intensity = 0;
};

struct PointCloud {
    std::vector<Point> points;
};

struct SensorConfig {
    int height = 64;          // beam count
    int width = 1024;         // azimuth bins
    double fov_up = 3.0;      // degrees
    double fov_down = -25.0;  // degrees
    double max_range = 80.0;  // meters

    void validate() const {
        if (height < 2 || width < 2)
            throw std::invalid_argument("SensorConfig: H, W must be >= 2");
        if (!(fov_up > fov_down))
            throw std::invalid_argument("SensorConfig: fov_up must exceed fov_down");
        if (!(max_range > 0))
            throw std::invalid_argument("SensorConfig: max_range must be positive");
    }

    static SensorConfig toy() { return {32, 256, 3.0, -25.0, 80.0}; }
};

struct RangeMap {
    SensorConfig config;
    std::vector<double> depth;      // H*W, 0 marks invalid
    std::vector<double> intensity;  // H*W in [0,1]

    RangeMap() = default;
    explicit RangeMap(SensorConfig cfg)
        : config(cfg),
          depth(static_cast<std::size_t>(cfg.height) * cfg.width, 0.0),
          intensity(static_cast<std::size_t>(cfg.height) * cfg.width, 0.0) {}

    std::size_t size() const { return depth.size(); }
    bool valid(std::size_t i) const { return depth[i] > 0.0; }
    std::size_t valid_count() const {
        std::size_t n = 0;
        for (double d : depth) n += d > 0.0;
        return n;
    }
};

struct BEVGrid {
    int cells = 0;          // G
    double extent = 100.0;  // meters, full side length
    double cell = 1.0;      // meters
    std::vector<std::uint8_t> occupancy;  // G*G
};

namespace detail {
inline constexpr double kPi = std::numbers::pi_v<double>;
inline constexpr double kDeg2Rad = kPi / 180.0;
}  // namespace detail

struct ProjectionStats {
    std::size_t projected = 0;
    std::size_t unprojectable = 0;  // outside fov / range, or at origin
    std::size_t collisions = 0;     // lost to a nearer point in the same pixel
};

/// Spherical projection. Row 0 is the top beam; column 0 sits at azimuth
/// +pi and columns descend in azimuth. Pixel collisions keep the nearer
/// point.
inline RangeMap project(const PointCloud& cloud, const SensorConfig& cfg,
                        ProjectionStats* stats = nullptr) {
    cfg.validate();
    RangeMap rm(cfg);
    ProjectionStats st;
    const double fov_up = cfg.fov_up * detail::kDeg2Rad;
    const double fov_down = cfg.fov_down * detail::kDeg2Rad;
    const double fov = fov_up - fov_down;
    for (const Point& p : cloud.points) {
        const double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
        if (d <= 0.0 || d > cfg.max_range || !std::isfinite(d)) {
            ++st.unprojectable;
            continue;
        }
        const double pitch = std::asin(p.z / d);
        const double urow = (fov_up - pitch) / fov;
        if (urow < 0.0 || urow > 1.0) {
            ++st.unprojectable;
            continue;
        }
        int row = std::min(static_cast<int>(urow * cfg.height), cfg.height - 1);
        const double yaw = std::atan2(p.y, p.x);
        double ucol = (detail::kPi - yaw) / (2.0 * detail::kPi);
        int col = static_cast<int>(ucol * cfg.width) % cfg.width;
        if (col < 0) col += cfg.width;
        const std::size_t idx =
            static_cast<std::size_t>(row) * cfg.width + col;
        if (rm.depth[idx] > 0.0 && rm.depth[idx] <= d) {
            ++st.collisions;
            continue;
        }
        if (rm.depth[idx] > 0.0) ++st.collisions;
        rm.depth[idx] = d;
        rm.intensity[idx] = std::clamp(p.intensity, 0.0, 1.0);
        ++st.projected;
    }
    if (stats) *stats = st;
    return rm;
}

/// Ray direction through the center of pixel (row, col).
inline Point pixel_ray(const SensorConfig& cfg, int row, int col) {
    const double fov_up = cfg.fov_up * detail::kDeg2Rad;
    const double fov_down = cfg.fov_down * detail::kDeg2Rad;
    const double pitch =
        fov_up - (row + 0.5) / cfg.height * (fov_up - fov_down);
    const double yaw =
        detail::kPi - (col + 0.5) / cfg.width * 2.0 * detail::kPi;
    return {std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw),
            std::sin(pitch), 0.0};
}

/// One point per valid pixel, placed on the pixel-center ray.
inline PointCloud unproject(const RangeMap& rm) {
    PointCloud cloud;
    cloud.points.reserve(rm.valid_count());
    const SensorConfig& cfg = rm.config;
    for (int r = 0; r < cfg.height; ++r)
        for (int c = 0; c < cfg.width; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * cfg.width + c;
            if (!rm.valid(idx)) continue;
            Point dir = pixel_ray(cfg, r, c);
            const double d = rm.depth[idx];
            cloud.points.push_back(
                {dir.x * d, dir.y * d, dir.z * d, rm.intensity[idx]});
        }
    return cloud;
}

// ---------------------------------------------------------------------------
// normalization: range map <-> (2,H,W) tensor in [-1,1]
// ---------------------------------------------------------------------------

/// Log-scale depth mapping; invalid pixels land exactly on -1.
inline double normalize_depth(double d, double max_range) {
    if (d <= 0.0) return -1.0;
    return 2.0 * std::log1p(d) / std::log1p(max_range) - 1.0;
}

inline double denormalize_depth(double n, double max_range) {
    double d = std::expm1((n + 1.0) * 0.5 * std::log1p(max_range));
    if (d < 1e-9) return 0.0;
    return std::min(d, max_range);
}

/// (2,H,W) tensor: channel 0 normalized depth, channel 1 normalized
/// intensity. Invalid pixels carry -1 in both channels.
inline Tensor normalize(const RangeMap& rm) {
    const std::size_t n = rm.size();
    std::vector<double> v(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(rm.depth[i]) || !std::isfinite(rm.intensity[i]))
            throw std::domain_error("normalize: non-finite range map entry");
        if (rm.valid(i)) {
            v[i] = normalize_depth(rm.depth[i], rm.config.max_range);
            v[n + i] = 2.0 * std::clamp(rm.intensity[i], 0.0, 1.0) - 1.0;
        } else {
            v[i] = -1.0;
            v[n + i] = -1.0;
        }
    }
    return Tensor::from({2, rm.config.height, rm.config.width}, std::move(v));
}

inline RangeMap denormalize(const Tensor& t, const SensorConfig& cfg) {
    if (t.shape() != Shape{2, cfg.height, cfg.width})
        throw std::invalid_argument("denormalize: tensor shape " +
                                    shape_str(t.shape()) + " does not match config");
    RangeMap rm(cfg);
    const std::size_t n = rm.size();
    const auto& v = t.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(v[i]) || !std::isfinite(v[n + i]))
            throw std::domain_error("denormalize: non-finite input");
        const double d = denormalize_depth(std::clamp(v[i], -1.0, 1.0),
                                           cfg.max_range);
        rm.depth[i] = d;
        rm.intensity[i] =
            d > 0.0 ? std::clamp((v[n + i] + 1.0) * 0.5, 0.0, 1.0) : 0.0;
    }
    return rm;
}

// ---------------------------------------------------------------------------
// BEV occupancy
// ---------------------------------------------------------------------------

inline BEVGrid bev_occupancy(const PointCloud& cloud, double extent = 100.0,
                             double cell = 1.0) {
    if (extent <= 0 || cell <= 0)
        throw std::invalid_argument("bev_occupancy: extent and cell must be positive");
    const int g = static_cast<int>(std::llround(extent / cell));
    if (std::fabs(g * cell - extent) > 1e-9 * extent)
        throw std::invalid_argument("bev_occupancy: extent must be an integer "
                                    "multiple of cell size");
    BEVGrid grid;
    grid.cells = g;
    grid.extent = extent;
    grid.cell = cell;
    grid.occupancy.assign(static_cast<std::size_t>(g) * g, 0);
    const double half = extent / 2.0;
    for (const Point& p : cloud.points) {
        const int ix = static_cast<int>(std::floor((p.x + half) / cell));
        const int iy = static_cast<int>(std::floor((p.y + half) / cell));
        if (ix < 0 || ix >= g || iy < 0 || iy >= g) continue;
        grid.occupancy[static_cast<std::size_t>(iy) * g + ix] = 1;
    }
    return grid;
}

// ---------------------------------------------------------------------------
// file I/O
// ---------------------------------------------------------------------------

/// KITTI convention: flat little-endian float32 (x, y, z, intensity) records.
inline void save_cloud_bin(const std::filesystem::path& path,
                           const PointCloud& cloud) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (const Point& p : cloud.points) {
        float rec[4] = {static_cast<float>(p.x), static_cast<float>(p.y),
                        static_cast<float>(p.z), static_cast<float>(p.intensity)};
        os.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
}

inline PointCloud load_cloud_bin(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    const std::streamsize bytes = is.tellg();
    if (bytes % 16 != 0)
        throw std::runtime_error(path.string() + ": not a float32 x,y,z,i file");
    is.seekg(0);
    PointCloud cloud;
    cloud.points.resize(static_cast<std::size_t>(bytes) / 16);
    for (Point& p : cloud.points) {
        float rec[4];
        is.read(reinterpret_cast<char*>(rec), sizeof(rec));
        p = {rec[0], rec[1], rec[2], rec[3]};
    }
    return cloud;
}

/// Range map file: <stem>.rmap is a flat float32 blob (depth plane then
/// intensity plane) and <stem>.rmap.json is the sidecar with the geometry.
inline void save_range_map(const std::filesystem::path& stem,
                           const RangeMap& rm) {
    nlohmann::json side;
    side["height"] = rm.config.height;
    side["width"] = rm.config.width;
    side["fov_up"] = rm.config.fov_up;
    side["fov_down"] = rm.config.fov_down;
    side["max_range"] = rm.config.max_range;
    const std::string blob_path = stem.string() + ".rmap";
    std::ofstream js(blob_path + ".json");
    if (!js) throw std::runtime_error("cannot write " + blob_path + ".json");
    js << side.dump(2) << "\n";
    std::ofstream os(blob_path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + blob_path);
    auto write_plane = [&](const std::vector<double>& plane) {
        for (double d : plane) {
            float f = static_cast<float>(d);
            os.write(reinterpret_cast<const char*>(&f), sizeof(f));
        }
    };
    write_plane(rm.depth);
    write_plane(rm.intensity);
}

inline RangeMap load_range_map(const std::filesystem::path& stem) {
    const std::string blob_path = stem.string() + ".rmap";
    std::ifstream js(blob_path + ".json");
    if (!js) throw std::runtime_error("cannot read " + blob_path + ".json");
    nlohmann::json side = nlohmann::json::parse(js);
    SensorConfig cfg;
    cfg.height = side.at("height").get<int>();
    cfg.width = side.at("width").get<int>();
    cfg.fov_up = side.at("fov_up").get<double>();
    cfg.fov_down = side.at("fov_down").get<double>();
    cfg.max_range = side.at("max_range").get<double>();
    cfg.validate();
    RangeMap rm(cfg);
    std::ifstream is(blob_path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cannot read " + blob_path);
    const std::streamsize expected =
        static_cast<std::streamsize>(2 * rm.size() * sizeof(float));
    if (is.tellg() != expected)
        throw std::runtime_error(blob_path + ": blob length does not match sidecar");
    is.seekg(0);
    auto read_plane = [&](std::vector<double>& plane) {
        for (double& d : plane) {
            float f;
            is.read(reinterpret_cast<char*>(&f), sizeof(f));
            d = f;
        }
    };
    read_plane(rm.depth);
    read_plane(rm.intensity);
    return rm;
}

}  // namespace squall
