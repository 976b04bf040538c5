// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "squall/geometry.hpp"
#include "squall/rng.hpp"

using namespace squall;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t n, double max_r = 60.0) {
    PointCloud cloud;
    cloud.points.reserve(n);
    const double pi = std::numbers::pi;
    for (std::size_t i = 0; i < n; ++i) {
        // sample in the sensor fov so points are projectable
        double yaw = rng.uniform(-pi, pi);
        double pitch = rng.uniform(-25.0, 3.0) * pi / 180.0;
        double d = rng.uniform(1.0, max_r);
        cloud.points.push_back({d * std::cos(pitch) * std::cos(yaw),
                                d * std::cos(pitch) * std::sin(yaw),
                                d * std::sin(pitch), rng.uniform()});
    }
    return cloud;
}

}  // namespace

TEST_CASE("projection formulas") {
    SensorConfig cfg{64, 1024, 3.0, -25.0, 80.0};
    SECTION("single point on the x axis") {
        PointCloud c;
        c.points.push_back({10, 0, 0, 0.5});
        RangeMap rm = project(c, cfg);
        // pitch 0 -> row floor((3/28)*64) = 6; yaw 0 -> col 512
        REQUIRE(rm.depth[6 * 1024 + 512] == Catch::Approx(10.0));
        REQUIRE(rm.valid_count() == 1);
    }
    SECTION("empty cloud -> all invalid") {
        RangeMap rm = project(PointCloud{}, cfg);
        REQUIRE(rm.valid_count() == 0);
    }
    SECTION("collision keeps the nearer point") {
        PointCloud c;
        c.points.push_back({9, 0, 0, 0.1});
        c.points.push_back({5, 0, 0, 0.9});
        ProjectionStats st;
        RangeMap rm = project(c, cfg, &st);
        REQUIRE(rm.depth[6 * 1024 + 512] == Catch::Approx(5.0));
        REQUIRE(st.collisions == 1);
        // order must not matter
        std::swap(c.points[0], c.points[1]);
        rm = project(c, cfg);
        REQUIRE(rm.depth[6 * 1024 + 512] == Catch::Approx(5.0));
    }
    SECTION("origin and out-of-range points are counted, not projected") {
        PointCloud c;
        c.points.push_back({0, 0, 0, 0});
        c.points.push_back({200, 0, 0, 0});
        c.points.push_back({0, 0, 10, 0});  // far above fov
        ProjectionStats st;
        RangeMap rm = project(c, cfg, &st);
        REQUIRE(rm.valid_count() == 0);
        REQUIRE(st.unprojectable == 3);
    }
}

TEST_CASE("unproject") {
    SensorConfig cfg = SensorConfig::toy();
    SECTION("all-invalid map -> empty cloud") {
        REQUIRE(unproject(RangeMap(cfg)).points.empty());
    }
    SECTION("project(unproject(rm)) is a fixed point on pixel-center rays") {
        Rng rng(5);
        RangeMap rm = project(random_cloud(rng, 3000), cfg);
        RangeMap rm2 = project(unproject(rm), cfg);
        REQUIRE(rm2.depth.size() == rm.depth.size());
        for (std::size_t i = 0; i < rm.size(); ++i) {
            REQUIRE(rm2.depth[i] == Catch::Approx(rm.depth[i]).margin(1e-9));
            REQUIRE(rm2.intensity[i] ==
                    Catch::Approx(rm.intensity[i]).margin(1e-9));
        }
    }
    SECTION("round-trip depth error bounded by angular quantization") {
        Rng rng(6);
        PointCloud cloud = random_cloud(rng, 2000, 40.0);
        RangeMap rm = project(cloud, cfg);
        PointCloud back = unproject(rm);
        // worst case: the true point sits at a pixel corner while we return
        // the center ray; the chord error at distance d under half-bin angular
        // offsets (a_az/2, a_el/2) is d * sqrt(a_az^2 + a_el^2) / 2.
        const double pi = std::numbers::pi;
        const double a_az = 2.0 * pi / cfg.width;
        const double a_el =
            (cfg.fov_up - cfg.fov_down) * pi / 180.0 / cfg.height;
        const double ang = std::sqrt(a_az * a_az + a_el * a_el) / 2.0;
        // match surviving pixels: re-project each original point and compare
        RangeMap check = project(cloud, cfg);
        for (const Point& p : back.points) {
            double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
            // find the pixel this point occupies and its source depth
            RangeMap single = project(PointCloud{{p}}, cfg);
            for (std::size_t i = 0; i < single.size(); ++i)
                if (single.valid(i)) {
                    REQUIRE(check.valid(i));
                    double src = check.depth[i];
                    REQUIRE(std::fabs(d - src) <=
                            src * ang + 1e-9);  // small-angle chord bound
                }
        }
    }
    SECTION("every valid pixel re-projects to the same pixel") {
        Rng rng(7);
        RangeMap rm = project(random_cloud(rng, 4000), cfg);
        PointCloud back = unproject(rm);
        RangeMap rm2 = project(back, cfg);
        REQUIRE(rm2.valid_count() == rm.valid_count());
    }
}

TEST_CASE("azimuth rotation shifts columns cyclically") {
    SensorConfig cfg = SensorConfig::toy();
    Rng rng(11);
    // build a cloud on pixel centers so rotation-by-one-bin is exact
    PointCloud cloud;
    for (int k = 0; k < 500; ++k) {
        int r = static_cast<int>(rng.uniform_index(cfg.height));
        int c = static_cast<int>(rng.uniform_index(cfg.width));
        Point dir = pixel_ray(cfg, r, c);
        double d = rng.uniform(2.0, 70.0);
        cloud.points.push_back({dir.x * d, dir.y * d, dir.z * d, 0.5});
    }
    const double bin = 2.0 * std::numbers::pi / cfg.width;
    PointCloud rotated;
    for (const Point& p : cloud.points) {
        // rotate by -bin: azimuth decreases, column index increases by one
        double c = std::cos(-bin), s = std::sin(-bin);
        rotated.points.push_back(
            {p.x * c - p.y * s, p.x * s + p.y * c, p.z, p.intensity});
    }
    RangeMap a = project(cloud, cfg);
    RangeMap b = project(rotated, cfg);
    for (int r = 0; r < cfg.height; ++r)
        for (int col = 0; col < cfg.width; ++col) {
            int shifted = (col + 1) % cfg.width;
            REQUIRE(b.depth[r * cfg.width + shifted] ==
                    Catch::Approx(a.depth[r * cfg.width + col]).margin(1e-9));
        }
}

TEST_CASE("normalize / denormalize") {
    SensorConfig cfg = SensorConfig::toy();
    SECTION("endpoints") {
        REQUIRE(normalize_depth(0.0, cfg.max_range) == -1.0);
        REQUIRE(normalize_depth(cfg.max_range, cfg.max_range) ==
                Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("round trip on random maps") {
        Rng rng(13);
        PointCloud cloud = random_cloud(rng, 4000);
        RangeMap rm = project(cloud, cfg);
        RangeMap back = denormalize(normalize(rm), cfg);
        for (std::size_t i = 0; i < rm.size(); ++i) {
            REQUIRE(std::fabs(back.depth[i] - rm.depth[i]) <
                    1e-9 * cfg.max_range);
            REQUIRE(std::fabs(back.intensity[i] - rm.intensity[i]) < 1e-9);
        }
    }
    SECTION("invalid pixels map to -1 and back to 0") {
        RangeMap rm(cfg);
        Tensor t = normalize(rm);
        for (std::size_t i = 0; i < rm.size(); ++i) REQUIRE(t.data()[i] == -1.0);
        RangeMap back = denormalize(t, cfg);
        REQUIRE(back.valid_count() == 0);
    }
    SECTION("non-finite input rejected") {
        RangeMap rm(cfg);
        rm.depth[0] = std::nan("");
        REQUIRE_THROWS_AS(normalize(rm), std::domain_error);
    }
}

TEST_CASE("bev occupancy") {
    SECTION("empty cloud -> empty grid") {
        BEVGrid g = bev_occupancy(PointCloud{}, 100, 1);
        for (auto o : g.occupancy) REQUIRE(o == 0);
    }
    SECTION("single near-origin point occupies the center cell") {
        PointCloud c;
        c.points.push_back({0.1, 0.1, 0, 0});
        BEVGrid g = bev_occupancy(c, 100, 1);
        std::size_t count = 0, where = 0;
        for (std::size_t i = 0; i < g.occupancy.size(); ++i)
            if (g.occupancy[i]) {
                ++count;
                where = i;
            }
        REQUIRE(count == 1);
        REQUIRE(where == 50 * 100 + 50);
    }
    SECTION("matches brute-force binning and ignores outside points") {
        Rng rng(17);
        PointCloud cloud;
        for (int i = 0; i < 3000; ++i)
            cloud.points.push_back({rng.uniform(-80, 80), rng.uniform(-80, 80),
                                    rng.uniform(-2, 2), 0});
        BEVGrid g = bev_occupancy(cloud, 100, 2);
        std::vector<std::uint8_t> brute(50 * 50, 0);
        for (const Point& p : cloud.points) {
            if (p.x < -50 || p.x >= 50 || p.y < -50 || p.y >= 50) continue;
            int ix = static_cast<int>(std::floor((p.x + 50) / 2));
            int iy = static_cast<int>(std::floor((p.y + 50) / 2));
            brute[iy * 50 + ix] = 1;
        }
        REQUIRE(g.occupancy == brute);
    }
    SECTION("permutation invariance") {
        Rng rng(19);
        PointCloud cloud = random_cloud(rng, 500);
        BEVGrid a = bev_occupancy(cloud, 100, 1);
        std::reverse(cloud.points.begin(), cloud.points.end());
        BEVGrid b = bev_occupancy(cloud, 100, 1);
        REQUIRE(a.occupancy == b.occupancy);
    }
    SECTION("bad config rejected") {
        REQUIRE_THROWS_AS(bev_occupancy(PointCloud{}, 0, 1),
                          std::invalid_argument);
        REQUIRE_THROWS_AS(bev_occupancy(PointCloud{}, 100, 0.7),
                          std::invalid_argument);
    }
}

TEST_CASE("file formats round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "squall_geom_test";
    fs::create_directories(dir);
    Rng rng(23);
    PointCloud cloud = random_cloud(rng, 300);

    SECTION("cloud .bin") {
        save_cloud_bin(dir / "a.bin", cloud);
        PointCloud back = load_cloud_bin(dir / "a.bin");
        REQUIRE(back.points.size() == cloud.points.size());
        for (std::size_t i = 0; i < cloud.points.size(); ++i) {
            REQUIRE(back.points[i].x ==
                    Catch::Approx(cloud.points[i].x).margin(1e-4));
            REQUIRE(back.points[i].intensity ==
                    Catch::Approx(cloud.points[i].intensity).margin(1e-6));
        }
    }
    SECTION("range map blob + sidecar") {
        RangeMap rm = project(cloud, SensorConfig::toy());
        save_range_map(dir / "frame", rm);
        RangeMap back = load_range_map(dir / "frame");
        REQUIRE(back.config.height == rm.config.height);
        REQUIRE(back.config.width == rm.config.width);
        for (std::size_t i = 0; i < rm.size(); ++i)
            REQUIRE(back.depth[i] == Catch::Approx(rm.depth[i]).margin(1e-3));
    }
    SECTION("truncated blob rejected") {
        RangeMap rm = project(cloud, SensorConfig::toy());
        save_range_map(dir / "bad", rm);
        fs::resize_file(dir / "bad.rmap", 100);
        REQUIRE_THROWS_AS(load_range_map(dir / "bad"), std::runtime_error);
    }
}
