// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named parameter store, Adam, and the checkpoint format: a JSON manifest
// (name, shape, byte offset per entry) next to one flat little-endian
// float32 blob.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "squall/tensor.hpp"

namespace squall {

class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

    /// Create-or-get. Projection matrices use uniform(-1/sqrt(fan_in), ..),
    /// everything created through `zeros` starts at zero.
    Tensor get_or_create(const std::string& name, Shape shape,
                         std::int64_t fan_in) {
        auto it = params_.find(name);
        if (it != params_.end()) return it->second;
        double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
        Tensor t = fan_in > 0 ? uniform_init(shape, -bound, bound, rng_, true)
                              : Tensor::zeros(shape, true);
        params_.emplace(name, t);
        return t;
    }

    Tensor zeros(const std::string& name, Shape shape) {
        return get_or_create(name, std::move(shape), 0);
    }

    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    Tensor at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end())
            throw std::out_of_range("ParamStore: no parameter '" + name + "'");
        return it->second;
    }

    /// Lexicographic by construction (std::map).
    const std::map<std::string, Tensor>& all() const { return params_; }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    std::uint64_t seed() const { return seed_; }
    Rng& rng() { return rng_; }

    std::size_t total_numel() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.data().size();
        return n;
    }

private:
    std::uint64_t seed_;
    Rng rng_;
    std::map<std::string, Tensor> params_;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    /// One update from the gradients accumulated in the store. Parameters
    /// listed in `frozen` keep their values (and spend no step count).
    void step(ParamStore& params,
              const std::vector<std::string>& frozen = {}) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& [name, p] : const_cast<std::map<std::string, Tensor>&>(params.all())) {
            if (std::find(frozen.begin(), frozen.end(), name) != frozen.end())
                continue;
            const auto& g = p.grad();
            if (g.empty())
                throw std::runtime_error("Adam: parameter '" + name +
                                         "' has no gradient");
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() != g.size()) m.assign(g.size(), 0.0);
            if (v.size() != g.size()) v.assign(g.size(), 0.0);
            auto& data = p.mutable_data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    void set_lr(double lr) { cfg_.lr = lr; }
    std::int64_t step_count() const { return t_; }

private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// checkpoint I/O
// ---------------------------------------------------------------------------

namespace ckpt {

inline void write_f32_blob(const std::filesystem::path& path,
                           const std::vector<float>& blob) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * sizeof(float)));
}

inline std::vector<float> read_f32_blob(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    const std::streamsize bytes = is.tellg();
    if (bytes % sizeof(float) != 0)
        throw std::runtime_error(path.string() + ": size not a multiple of 4");
    std::vector<float> blob(static_cast<std::size_t>(bytes) / sizeof(float));
    is.seekg(0);
    is.read(reinterpret_cast<char*>(blob.data()), bytes);
    return blob;
}

/// Writes <stem>.json (manifest) and <stem>.bin (float32 blob).
inline void save(const std::filesystem::path& stem, const ParamStore& params,
                 const std::vector<std::string>& frozen = {}) {
    nlohmann::json manifest;
    manifest["format"] = "squall-checkpoint-v1";
    manifest["seed"] = params.seed();
    manifest["frozen"] = frozen;
    std::vector<float> blob;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [name, t] : params.all()) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = blob.size() * sizeof(float);
        entries.push_back(e);
        for (double x : t.data()) blob.push_back(static_cast<float>(x));
    }
    manifest["params"] = entries;
    manifest["total_floats"] = blob.size();
    std::ofstream js(stem.string() + ".json");
    if (!js) throw std::runtime_error("cannot write " + stem.string() + ".json");
    js << manifest.dump(2) << "\n";
    write_f32_blob(stem.string() + ".bin", blob);
}

/// Loads values into an existing store; every manifest entry must already
/// exist with a matching shape (build the model first, then load).
inline nlohmann::json load(const std::filesystem::path& stem, ParamStore& params) {
    std::ifstream js(stem.string() + ".json");
    if (!js) throw std::runtime_error("cannot read " + stem.string() + ".json");
    nlohmann::json manifest = nlohmann::json::parse(js);
    auto blob = read_f32_blob(stem.string() + ".bin");
    if (manifest.at("total_floats").get<std::size_t>() != blob.size())
        throw std::runtime_error("checkpoint blob length mismatch: manifest " +
                                 std::to_string(manifest["total_floats"].get<std::size_t>()) +
                                 " vs file " + std::to_string(blob.size()));
    for (const auto& e : manifest.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        const Shape shape = e.at("shape").get<Shape>();
        const std::size_t off = e.at("offset").get<std::size_t>() / sizeof(float);
        Tensor t = params.at(name);
        if (t.shape() != shape)
            throw std::runtime_error("checkpoint shape mismatch for '" + name +
                                     "': " + shape_str(t.shape()) + " vs " +
                                     shape_str(shape));
        auto& data = t.mutable_data();
        if (off + data.size() > blob.size())
            throw std::runtime_error("checkpoint blob too short for '" + name + "'");
        for (std::size_t i = 0; i < data.size(); ++i)
            data[i] = static_cast<double>(blob[off + i]);
    }
    return manifest;
}

}  // namespace ckpt

}  // namespace squall
