// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// Latent feature aligner: a shared Gaussian head projects range maps into a
// diagonal-Gaussian latent, and a closed-form KL divergence pulls the
// distribution of one-step generations toward the distribution of real
// weather-degraded maps. The real branch acts as the target and receives no
// gradient.

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include "squall/nn.hpp"
#include "squall/tensor.hpp"

namespace squall {

// Projects a (C, H, W) map to (mu, sigma) of a dim-Z diagonal Gaussian:
// per-channel global average pool, then a single linear layer producing
// [mu | logvar]. logvar is clamped to [-10, 10] so sigma stays in a sane
// range. Shared between the "gen" and "real" branches.
class GaussianHead {
public:
    GaussianHead(ParamStore& ps, const std::string& prefix,
                 std::int64_t channels = 2, std::int64_t latent_dim = 32)
        : lin_(ps, prefix + ".lin", channels, 2 * latent_dim),
          channels_(channels),
          z_(latent_dim) {}

    std::pair<Tensor, Tensor> forward(const Tensor& map) const {
        if (map.shape().size() != 3 || map.shape()[0] != channels_)
            throw std::invalid_argument("GaussianHead: expected (" +
                                        std::to_string(channels_) +
                                        ", H, W) input, got " +
                                        shape_str(map.shape()));
        const std::int64_t j = map.shape()[1] * map.shape()[2];
        Tensor pooled = mean_axis(reshape(map, {channels_, j}), 1);
        Tensor out = reshape(lin_.forward(reshape(pooled, {1, channels_})),
                             {2 * z_});
        Tensor mu = slice(out, 0, 0, z_);
        Tensor logvar = clamp(slice(out, 0, z_, z_), -10.0, 10.0);
        Tensor sigma = exp(logvar * 0.5);
        return {mu, sigma};
    }

    std::int64_t latent_dim() const { return z_; }

private:
    Linear lin_;
    std::int64_t channels_, z_;
};

// z = sigma * eta + mu; the reparameterization trick, so gradients reach mu
// and sigma through a sample.
inline Tensor reparameterize(const Tensor& mu, const Tensor& sigma,
                             const Tensor& eta) {
    if (mu.shape() != sigma.shape() || mu.shape() != eta.shape())
        throw std::invalid_argument("reparameterize: shape mismatch");
    return sigma * eta + mu;
}

// Closed-form KL(real || gen) between diagonal Gaussians, summed over
// dimensions. The real branch is detached: it is the alignment target.
inline Tensor kl_align_loss(const Tensor& mu_real, const Tensor& sigma_real,
                            const Tensor& mu_gen, const Tensor& sigma_gen) {
    for (const Tensor* s : {&sigma_real, &sigma_gen})
        for (double v : s->data())
            if (!(v > 0.0))
                throw std::invalid_argument(
                    "kl_align_loss: sigma must be positive");
    Tensor mr = detach(mu_real);
    Tensor sr = detach(sigma_real);
    Tensor dmu = mr - mu_gen;
    Tensor var_g = sigma_gen * sigma_gen;
    Tensor term = log(sigma_gen) - log(sr) +
                  (sr * sr + dmu * dmu) / (var_g * 2.0) - 0.5;
    return sum(term);
}

// L_LFA: head both maps, then KL(real || gen). Gradients flow through the
// gen branch only (including the shared head parameters on that side).
inline Tensor lfa_loss(const Tensor& r_gen, const Tensor& r_real,
                       const GaussianHead& head) {
    auto [mu_g, sig_g] = head.forward(r_gen);
    auto [mu_r, sig_r] = head.forward(r_real);
    return kl_align_loss(mu_r, sig_r, mu_g, sig_g);
}

}  // namespace squall
