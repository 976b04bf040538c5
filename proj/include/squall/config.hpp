// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON file drives every CLI subcommand; command-line
// flags override individual fields after the file is loaded.

#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "squall/diffusion.hpp"
#include "squall/geometry.hpp"
#include "squall/toydata.hpp"

namespace squall {

struct ScheduleConfig {
    int timesteps = 100;
    // T=100 profile matching the standard T=1000 (1e-4, 0.02) noise budget:
    // ten times fewer steps, ten times the per-step beta
    double beta_start = 1e-3;
    double beta_end = 0.2;
};

struct TrainConfig {
    int steps = 3000;
    int batch = 8;
    double lr = 1e-3;
    int checkpoint_every = 500;
    double lfa_weight = 1.0;
    double clc_weight = 1.0;
    double holdout_fraction = 0.125;  // tail of the toy set kept for eval
};

struct PathsConfig {
    std::string input_dir;   // corpus of .bin clouds or range-map stems
    std::string output_dir = "out";
    std::string checkpoint = "out/model";
    std::string anchors;     // empty -> built-in orthonormal defaults
};

struct MetricsConfig {
    double extent = 100.0;
    double cell = 1.0;
    int range_bins = 32;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string sensor = "toy";  // toy | hdl64
    ScheduleConfig schedule;
    SmgConfig model = SmgConfig::toy();
    TrainConfig train;
    ToyDatasetSpec toy;
    PathsConfig paths;
    MetricsConfig metrics;

    SensorConfig sensor_config() const {
        if (sensor == "toy") return SensorConfig::toy();
        if (sensor == "hdl64") return SensorConfig{};
        throw std::invalid_argument("unknown sensor profile '" + sensor + "'");
    }

    NoiseSchedule make_noise_schedule() const {
        return make_schedule(schedule.timesteps, schedule.beta_start,
                             schedule.beta_end);
    }

    void validate() const {
        sensor_config().validate();
        model.validate();
        toy.validate();
        if (schedule.timesteps < 1 || schedule.beta_start <= 0 ||
            schedule.beta_end >= 1 || schedule.beta_start > schedule.beta_end)
            throw std::invalid_argument("bad schedule config");
        if (train.steps < 0 || train.batch < 1 || train.lr <= 0 ||
            train.checkpoint_every < 1)
            throw std::invalid_argument("bad train config");
        if (train.holdout_fraction < 0 || train.holdout_fraction >= 1)
            throw std::invalid_argument("bad holdout fraction");
        if (metrics.extent <= 0 || metrics.cell <= 0 || metrics.range_bins < 1)
            throw std::invalid_argument("bad metrics config");
        if (paths.output_dir.empty() || paths.checkpoint.empty())
            throw std::invalid_argument("output_dir and checkpoint required");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{
        {"seed", c.seed},
        {"sensor", c.sensor},
        {"schedule",
         {{"timesteps", c.schedule.timesteps},
          {"beta_start", c.schedule.beta_start},
          {"beta_end", c.schedule.beta_end}}},
        {"model",
         {{"channels", c.model.channels},
          {"time_dim", c.model.time_dim},
          {"weather_dim", c.model.weather_dim},
          {"cond_dim", c.model.cond_dim},
          {"spider_embed", c.model.spider_embed},
          {"spider_state", c.model.spider_state},
          {"spider_layers", c.model.spider_layers}}},
        {"train",
         {{"steps", c.train.steps},
          {"batch", c.train.batch},
          {"lr", c.train.lr},
          {"checkpoint_every", c.train.checkpoint_every},
          {"lfa_weight", c.train.lfa_weight},
          {"clc_weight", c.train.clc_weight},
          {"holdout_fraction", c.train.holdout_fraction}}},
        {"toy",
         {{"frames", c.toy.frames},
          {"ground_z", c.toy.ground_z},
          {"min_boxes", c.toy.min_boxes},
          {"max_boxes", c.toy.max_boxes},
          {"min_size", c.toy.min_size},
          {"max_size", c.toy.max_size},
          {"wall_probability", c.toy.wall_probability},
          {"spawn_radius", c.toy.spawn_radius},
          {"seed", c.toy.seed}}},
        {"paths",
         {{"input_dir", c.paths.input_dir},
          {"output_dir", c.paths.output_dir},
          {"checkpoint", c.paths.checkpoint},
          {"anchors", c.paths.anchors}}},
        {"metrics",
         {{"extent", c.metrics.extent},
          {"cell", c.metrics.cell},
          {"range_bins", c.metrics.range_bins}}}};
}

namespace detail {
template <class T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace detail

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    detail::maybe(j, "seed", c.seed);
    detail::maybe(j, "sensor", c.sensor);
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        detail::maybe(s, "timesteps", c.schedule.timesteps);
        detail::maybe(s, "beta_start", c.schedule.beta_start);
        detail::maybe(s, "beta_end", c.schedule.beta_end);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::maybe(m, "channels", c.model.channels);
        detail::maybe(m, "time_dim", c.model.time_dim);
        detail::maybe(m, "weather_dim", c.model.weather_dim);
        detail::maybe(m, "cond_dim", c.model.cond_dim);
        detail::maybe(m, "spider_embed", c.model.spider_embed);
        detail::maybe(m, "spider_state", c.model.spider_state);
        detail::maybe(m, "spider_layers", c.model.spider_layers);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::maybe(t, "steps", c.train.steps);
        detail::maybe(t, "batch", c.train.batch);
        detail::maybe(t, "lr", c.train.lr);
        detail::maybe(t, "checkpoint_every", c.train.checkpoint_every);
        detail::maybe(t, "lfa_weight", c.train.lfa_weight);
        detail::maybe(t, "clc_weight", c.train.clc_weight);
        detail::maybe(t, "holdout_fraction", c.train.holdout_fraction);
    }
    if (j.contains("toy")) {
        const auto& t = j.at("toy");
        detail::maybe(t, "frames", c.toy.frames);
        detail::maybe(t, "ground_z", c.toy.ground_z);
        detail::maybe(t, "min_boxes", c.toy.min_boxes);
        detail::maybe(t, "max_boxes", c.toy.max_boxes);
        detail::maybe(t, "min_size", c.toy.min_size);
        detail::maybe(t, "max_size", c.toy.max_size);
        detail::maybe(t, "wall_probability", c.toy.wall_probability);
        detail::maybe(t, "spawn_radius", c.toy.spawn_radius);
        detail::maybe(t, "seed", c.toy.seed);
    }
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        detail::maybe(p, "input_dir", c.paths.input_dir);
        detail::maybe(p, "output_dir", c.paths.output_dir);
        detail::maybe(p, "checkpoint", c.paths.checkpoint);
        detail::maybe(p, "anchors", c.paths.anchors);
    }
    if (j.contains("metrics")) {
        const auto& m = j.at("metrics");
        detail::maybe(m, "extent", c.metrics.extent);
        detail::maybe(m, "cell", c.metrics.cell);
        detail::maybe(m, "range_bins", c.metrics.range_bins);
    }
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot read config file " + path.string());
    RunConfig c = nlohmann::json::parse(in).get<RunConfig>();
    return c;
}

}  // namespace squall
