// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "squall/metrics.hpp"

using namespace squall;

namespace {

PointCloud cloud_at(std::initializer_list<std::pair<double, double>> xy) {
    PointCloud c;
    for (auto [x, y] : xy) c.points.push_back({x, y, 0.0, 0.5});
    return c;
}

std::vector<std::vector<double>> gaussian_blob(std::size_t n, std::size_t dim,
                                               double mean, double stddev,
                                               unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(mean, stddev);
    std::vector<std::vector<double>> out(n, std::vector<double>(dim));
    for (auto& v : out)
        for (auto& x : v) x = dist(rng);
    return out;
}

}  // namespace

TEST_CASE("bev_distribution averages binary occupancy over frames") {
    // Three 4x4 frames built by hand; expected frequency is the exact mean.
    const double extent = 4.0, cell = 1.0;
    PointCloud f0 = cloud_at({{-1.5, -1.5}});             // cell (0,0)
    PointCloud f1 = cloud_at({{-1.5, -1.5}, {1.5, 1.5}}); // (0,0) and (3,3)
    PointCloud f2 = cloud_at({{1.5, 1.5}});               // cell (3,3)
    BevDistribution d = bev_distribution({f0, f1, f2}, extent, cell);
    REQUIRE(d.cells == 4);
    REQUIRE(d.frames == 3);
    REQUIRE(d.frequency.size() == 16);
    CHECK(d.frequency[0] == Catch::Approx(2.0 / 3.0).margin(1e-12));
    CHECK(d.frequency[15] == Catch::Approx(2.0 / 3.0).margin(1e-12));
    double total = 0;
    for (double f : d.frequency) total += f;
    CHECK(total == Catch::Approx(4.0 / 3.0).margin(1e-12));
}

TEST_CASE("bev_distribution of identical frames equals a single frame grid") {
    PointCloud f = cloud_at({{0.2, 0.3}, {-1.1, 1.8}, {1.9, -0.4}});
    BEVGrid g = bev_occupancy(f, 4.0, 1.0);
    BevDistribution d = bev_distribution({f, f, f, f}, 4.0, 1.0);
    for (std::size_t i = 0; i < d.frequency.size(); ++i)
        CHECK(d.frequency[i] == static_cast<double>(g.occupancy[i]));
}

TEST_CASE("bev_distribution rejects an empty frame set") {
    CHECK_THROWS_AS(bev_distribution({}), std::invalid_argument);
}

TEST_CASE("jsd of a distribution with itself is zero") {
    std::vector<double> p{0.1, 0.4, 0.2, 0.3};
    CHECK(jsd(p, p) == 0.0);
}

TEST_CASE("jsd of disjoint supports is ln 2") {
    std::vector<double> p{1.0, 0.0, 0.0, 0.0};
    std::vector<double> q{0.0, 0.0, 0.5, 0.5};
    CHECK(jsd(p, q) == Catch::Approx(std::log(2.0)).margin(1e-9));
}

TEST_CASE("jsd is symmetric and bounded on random inputs") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(12), q(12);
        for (auto& x : p) x = u(rng);
        for (auto& x : q) x = u(rng);
        const double d = jsd(p, q);
        CHECK(jsd(q, p) == Catch::Approx(d).margin(1e-12));
        CHECK(d >= 0.0);
        CHECK(d <= std::log(2.0) + 1e-12);
    }
}

TEST_CASE("jsd input validation") {
    std::vector<double> p{0.5, 0.5};
    std::vector<double> longer{0.3, 0.3, 0.4};
    std::vector<double> negative{1.2, -0.2};
    std::vector<double> empty;
    CHECK_THROWS_AS(jsd(p, longer), std::invalid_argument);
    CHECK_THROWS_AS(jsd(p, negative), std::invalid_argument);
    CHECK_THROWS_AS(jsd(empty, empty), std::invalid_argument);
}

TEST_CASE("jsd accepts unnormalized nonnegative weights") {
    // Scaling both inputs by constants must not change the value, since the
    // implementation renormalizes.
    std::vector<double> p{1.0, 4.0, 2.0, 3.0};
    std::vector<double> q{2.0, 1.0, 5.0, 2.0};
    std::vector<double> p2(p), q2(q);
    for (auto& x : p2) x *= 7.0;
    for (auto& x : q2) x *= 0.1;
    CHECK(jsd(p2, q2) == Catch::Approx(jsd(p, q)).margin(1e-12));
}

TEST_CASE("mmd of a set against itself is exactly zero") {
    auto a = gaussian_blob(20, 5, 0.0, 1.0, 11);
    CHECK(std::fabs(mmd(a, a)) < 1e-12);
}

TEST_CASE("mmd is near zero for two draws from the same distribution") {
    auto a = gaussian_blob(200, 4, 0.0, 1.0, 21);
    auto b = gaussian_blob(200, 4, 0.0, 1.0, 22);
    CHECK(std::fabs(mmd(a, b)) < 0.01);
}

TEST_CASE("mmd is symmetric") {
    auto a = gaussian_blob(30, 3, 0.0, 1.0, 31);
    auto b = gaussian_blob(40, 3, 0.5, 1.5, 32);
    CHECK(mmd(a, b) == Catch::Approx(mmd(b, a)).margin(1e-12));
}

TEST_CASE("mmd separates well-separated blobs") {
    auto a = gaussian_blob(100, 4, 0.0, 0.5, 41);
    auto b = gaussian_blob(100, 4, 10.0, 0.5, 42);
    auto a2 = gaussian_blob(100, 4, 0.0, 0.5, 43);
    const double separated = mmd(a, b);
    const double same = std::fabs(mmd(a, a2));
    CHECK(separated > 0.5);
    CHECK(separated > 10.0 * same);
}

TEST_CASE("mmd handles a degenerate pooled set via the bandwidth fallback") {
    std::vector<std::vector<double>> a(3, std::vector<double>{1.0, 2.0});
    std::vector<std::vector<double>> b(3, std::vector<double>{1.0, 2.0});
    CHECK(std::fabs(mmd(a, b)) < 1e-12);
}

TEST_CASE("mmd input validation") {
    auto a = gaussian_blob(5, 3, 0.0, 1.0, 51);
    auto short_set = gaussian_blob(1, 3, 0.0, 1.0, 52);
    CHECK_THROWS_AS(mmd(a, short_set), std::invalid_argument);
    auto bad = gaussian_blob(5, 4, 0.0, 1.0, 53);
    CHECK_THROWS_AS(mmd(a, bad), std::invalid_argument);
}

TEST_CASE("occupancy_vectors matches bev_occupancy per frame") {
    PointCloud f0 = cloud_at({{0.2, 0.3}});
    PointCloud f1 = cloud_at({{-1.2, 1.7}, {1.1, -0.9}});
    auto vecs = occupancy_vectors({f0, f1}, 4.0, 1.0);
    REQUIRE(vecs.size() == 2);
    BEVGrid g0 = bev_occupancy(f0, 4.0, 1.0);
    for (std::size_t i = 0; i < g0.occupancy.size(); ++i)
        CHECK(vecs[0][i] == static_cast<double>(g0.occupancy[i]));
}

TEST_CASE("range_histogram_jsd of identical sets is zero") {
    SensorConfig cfg = SensorConfig::toy();
    RangeMap rm(cfg);
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> u(1.0, 70.0);
    for (auto& d : rm.depth) d = u(rng);
    CHECK(range_histogram_jsd({rm}, {rm}, 16) == 0.0);
}

TEST_CASE("range_histogram_jsd matches a hand-binned two-frame oracle") {
    SensorConfig cfg;
    cfg.height = 2;
    cfg.width = 2;
    cfg.max_range = 80.0;
    RangeMap a(cfg), b(cfg);
    // 4 bins of width 20m. Frame a: depths 10 (bin 0), 30 (bin 1), two
    // invalid. Frame b: 50 (bin 2), 70 (bin 3), 75 (bin 3), one invalid.
    a.depth = {10.0, 30.0, 0.0, 0.0};
    b.depth = {50.0, 70.0, 75.0, 0.0};
    std::vector<double> ha{1, 1, 0, 0};
    std::vector<double> hb{0, 0, 1, 2};
    CHECK(range_histogram_jsd({a}, {b}, 4) ==
          Catch::Approx(jsd(ha, hb)).margin(1e-12));
}

TEST_CASE("range_histogram_jsd is bounded and clamps overflow depths") {
    SensorConfig cfg;
    cfg.height = 2;
    cfg.width = 2;
    cfg.max_range = 80.0;
    RangeMap a(cfg), b(cfg);
    a.depth = {5.0, 5.0, 5.0, 5.0};
    b.depth = {95.0, 120.0, 79.0, 0.0};  // >max_range clamps into last bin
    const double d = range_histogram_jsd({a}, {b}, 8);
    CHECK(d <= std::log(2.0) + 1e-12);
    CHECK(d == Catch::Approx(std::log(2.0)).margin(1e-6));
    CHECK_THROWS_AS(range_histogram_jsd({}, {a}, 8), std::invalid_argument);
    CHECK_THROWS_AS(range_histogram_jsd({a}, {b}, 0), std::invalid_argument);
}
