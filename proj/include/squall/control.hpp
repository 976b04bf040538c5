// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// Contrastive weather controller: a small convolutional encoder maps a
// corrupted range map to a unit embedding w, fixed per-weather anchor
// vectors stand in for frozen text embeddings, and an information-bottleneck
// contrastive loss pushes w toward the anchor of its true weather kind and
// away from the others. The resulting w conditions the denoiser.

#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "squall/mdp.hpp"
#include "squall/nn.hpp"
#include "squall/tensor.hpp"

namespace squall {

struct ClcConfig {
    double beta = 0.2;
    double tau = 0.07;
    std::int64_t embed_dim = 64;

    void validate() const {
        if (beta < 0 || tau <= 0)
            throw std::invalid_argument(
                "ClcConfig: need beta >= 0 and tau > 0");
    }
};

inline Tensor l2_normalize(const Tensor& v, double eps = 1e-12) {
    Tensor norm = sqrt(sum(v * v) + eps);
    return v / reshape(norm, {1});
}

// Weather encoder W: strided convolutions over the normalized corrupted map,
// global average pool, linear projection to dim E, L2 normalization.
class WeatherEncoder {
public:
    WeatherEncoder(ParamStore& ps, const std::string& prefix,
                   std::int64_t embed_dim = 64, std::int64_t hidden = 16)
        : conv1_(ps, prefix + ".conv1", 2, hidden / 2, 3, 2, 2),
          conv2_(ps, prefix + ".conv2", hidden / 2, hidden, 3, 2, 2),
          lin_(ps, prefix + ".lin", hidden, embed_dim),
          hidden_(hidden),
          embed_dim_(embed_dim) {}

    Tensor forward(const Tensor& map) const {
        if (map.shape().size() != 3 || map.shape()[0] != 2)
            throw std::invalid_argument("WeatherEncoder: expected (2, H, W)");
        Tensor h = silu(conv1_.forward(map));
        h = silu(conv2_.forward(h));
        const std::int64_t j = h.shape()[1] * h.shape()[2];
        Tensor pooled = mean_axis(reshape(h, {hidden_, j}), 1);
        Tensor w = reshape(lin_.forward(reshape(pooled, {1, hidden_})),
                           {embed_dim_});
        return l2_normalize(w);
    }

    std::int64_t embed_dim() const { return embed_dim_; }

private:
    Conv2d conv1_, conv2_;
    Linear lin_;
    std::int64_t hidden_, embed_dim_;
};

// Four frozen unit anchors, one per weather kind, in the fixed order
// clear, snow, fog, rain. These play the role of text embeddings from a
// frozen encoder; real externally computed embeddings can be loaded from
// the same file format.
struct AnchorSet {
    std::int64_t dim = 64;
    std::array<std::vector<double>, 4> vectors;  // indexed by WeatherKind

    const std::vector<double>& of(WeatherKind k) const {
        return vectors[static_cast<std::size_t>(k)];
    }

    Tensor tensor(WeatherKind k) const {
        return Tensor::from({dim}, of(k), false);
    }

    void validate() const {
        for (const auto& v : vectors) {
            if (static_cast<std::int64_t>(v.size()) != dim)
                throw std::runtime_error("AnchorSet: dimension mismatch");
            double n2 = 0;
            for (double x : v) n2 += x * x;
            if (std::fabs(n2 - 1.0) > 1e-6)
                throw std::runtime_error("AnchorSet: anchors must be unit norm");
        }
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = i + 1; j < 4; ++j) {
                double dot = 0;
                for (std::int64_t d = 0; d < dim; ++d)
                    dot += vectors[i][d] * vectors[j][d];
                if (std::fabs(dot) >= 0.5)
                    throw std::runtime_error(
                        "AnchorSet: anchors for " +
                        std::string(weather_name(
                            static_cast<WeatherKind>(i))) +
                        " and " +
                        std::string(weather_name(
                            static_cast<WeatherKind>(j))) +
                        " are not separated (|cos| = " + std::to_string(dot) +
                        ")");
            }
    }
};

// Default anchors: seeded random vectors made exactly orthonormal by
// Gram-Schmidt, so pairwise cosine similarity is 0 up to round-off.
inline AnchorSet make_default_anchors(std::int64_t dim = 64,
                                      std::uint64_t seed = 42) {
    if (dim < 4)
        throw std::invalid_argument("make_default_anchors: dim must be >= 4");
    AnchorSet a;
    a.dim = dim;
    Rng rng(seed);
    for (auto& v : a.vectors) {
        v.resize(static_cast<std::size_t>(dim));
        for (auto& x : v) x = rng.normal();
    }
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0;
            for (std::int64_t d = 0; d < dim; ++d)
                dot += a.vectors[i][d] * a.vectors[j][d];
            for (std::int64_t d = 0; d < dim; ++d)
                a.vectors[i][d] -= dot * a.vectors[j][d];
        }
        double n2 = 0;
        for (double x : a.vectors[i]) n2 += x * x;
        const double inv = 1.0 / std::sqrt(n2);
        for (auto& x : a.vectors[i]) x *= inv;
    }
    a.validate();
    return a;
}

// Anchor file: <stem>.json {dim, kinds} + <stem>.bin float32 blob, one row
// per kind in the fixed kind order.
inline void save_anchors(const std::filesystem::path& stem,
                         const AnchorSet& a) {
    a.validate();
    nlohmann::json manifest;
    manifest["dim"] = a.dim;
    nlohmann::json kinds = nlohmann::json::array();
    for (auto k : all_weather_kinds()) kinds.push_back(weather_name(k));
    manifest["kinds"] = kinds;
    std::ofstream js(stem.string() + ".json");
    if (!js)
        throw std::runtime_error("cannot write " + stem.string() + ".json");
    js << manifest.dump(2) << "\n";
    std::vector<float> blob;
    for (const auto& v : a.vectors)
        for (double x : v) blob.push_back(static_cast<float>(x));
    ckpt::write_f32_blob(stem.string() + ".bin", blob);
}

inline AnchorSet load_anchors(const std::filesystem::path& stem,
                              std::int64_t expected_dim = 64) {
    std::ifstream js(stem.string() + ".json");
    if (!js)
        throw std::runtime_error("cannot read " + stem.string() + ".json");
    nlohmann::json manifest = nlohmann::json::parse(js);
    AnchorSet a;
    a.dim = manifest.at("dim").get<std::int64_t>();
    if (a.dim != expected_dim)
        throw std::runtime_error(
            "anchor dim mismatch: file has " + std::to_string(a.dim) +
            ", expected " + std::to_string(expected_dim));
    const auto kinds = manifest.at("kinds");
    if (kinds.size() != 4)
        throw std::runtime_error("anchor file must list 4 kinds");
    for (std::size_t i = 0; i < 4; ++i)
        if (kinds[i].get<std::string>() !=
            weather_name(static_cast<WeatherKind>(i)))
            throw std::runtime_error("anchor kinds out of order at index " +
                                     std::to_string(i));
    auto blob = ckpt::read_f32_blob(stem.string() + ".bin");
    if (blob.size() != static_cast<std::size_t>(4 * a.dim))
        throw std::runtime_error("anchor blob length mismatch");
    for (std::size_t i = 0; i < 4; ++i) {
        a.vectors[i].resize(static_cast<std::size_t>(a.dim));
        for (std::int64_t d = 0; d < a.dim; ++d)
            a.vectors[i][d] =
                static_cast<double>(blob[i * static_cast<std::size_t>(a.dim) +
                                         static_cast<std::size_t>(d)]);
    }
    a.validate();
    return a;
}

// Information-bottleneck contrastive loss:
//   L = logsumexp_{i != j}(cos(w, c_i)) - beta * cos(w, c_j) / tau
// which repels w from the wrong-kind anchors and attracts it to the true
// one. The temperature sharpens only the attraction term; scaling the
// raw cosines inside the logsumexp as well would let a single stray
// negative similarity blow the loss far outside [-beta/tau, ln 3 +
// beta/tau], the range the attraction term is calibrated to.
inline Tensor ib_loss(const Tensor& w, const AnchorSet& anchors,
                      WeatherKind true_kind, const ClcConfig& cfg = {}) {
    cfg.validate();
    if (w.shape() != Shape{anchors.dim})
        throw std::invalid_argument("ib_loss: embedding dim mismatch");
    Tensor wn = l2_normalize(w);
    std::vector<Tensor> negatives;
    Tensor s_pos = Tensor::scalar(0.0);
    for (auto k : all_weather_kinds()) {
        Tensor cos_sim = sum(wn * anchors.tensor(k));
        if (k == true_kind)
            s_pos = cos_sim * (1.0 / cfg.tau);
        else
            negatives.push_back(reshape(cos_sim, {1}));
    }
    return logsumexp(concat(negatives, 0)) - s_pos * cfg.beta;
}

// Nearest anchor by cosine similarity; used for embedding classification.
inline WeatherKind classify_embedding(const Tensor& w,
                                      const AnchorSet& anchors) {
    NoGradGuard ng;
    Tensor wn = l2_normalize(detach(w));
    WeatherKind best = WeatherKind::clear;
    double best_sim = -2.0;
    for (auto k : all_weather_kinds()) {
        double dot = 0;
        for (std::int64_t d = 0; d < anchors.dim; ++d)
            dot += wn.data()[static_cast<std::size_t>(d)] *
                   anchors.of(k)[static_cast<std::size_t>(d)];
        if (dot > best_sim) {
            best_sim = dot;
            best = k;
        }
    }
    return best;
}

// Fuses [t_embed | w] through one linear layer into the conditioning vector
// consumed by the denoiser at every U-level.
class ConditionFuser {
public:
    ConditionFuser(ParamStore& ps, const std::string& prefix,
                   std::int64_t time_dim, std::int64_t weather_dim,
                   std::int64_t cond_dim)
        : lin_(ps, prefix + ".lin", time_dim + weather_dim, cond_dim),
          time_dim_(time_dim),
          weather_dim_(weather_dim),
          cond_dim_(cond_dim) {}

    Tensor forward(const Tensor& t_embed, const Tensor& w) const {
        if (t_embed.shape() != Shape{time_dim_} ||
            w.shape() != Shape{weather_dim_})
            throw std::invalid_argument("ConditionFuser: dim mismatch");
        Tensor cat = concat({t_embed, w}, 0);
        return reshape(lin_.forward(reshape(cat, {1, time_dim_ + weather_dim_})),
                       {cond_dim_});
    }

    std::int64_t cond_dim() const { return cond_dim_; }

private:
    Linear lin_;
    std::int64_t time_dim_, weather_dim_, cond_dim_;
};

}  // namespace squall
