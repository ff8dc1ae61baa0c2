#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "dualprior/model.hpp"
#include "dualprior/rng.hpp"

namespace fixtures {

using namespace dualprior;

/// Small model for fast gradient checks.
inline ModelConfig tiny_config(std::size_t blocks = 1) {
    ModelConfig c;
    c.denoiser.image_size = 8;
    c.denoiser.base_width = 4;
    c.denoiser.depth = 2;
    c.denoiser.time_embed_dim = 8;
    c.control.stage_channels = {4, 6, 8};
    c.control.blocks_per_stage = blocks;
    c.timesteps = 200;
    return c;
}

/// Fresh models have zero-initialised output and control projections, which
/// make most gradients vanish. Fill those with small noise so every path is live.
inline void wake_zero_inits(SiameseModel& m, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : m.parameters()) {
        auto d = p.value.mutable_data();
        if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; }))
            for (auto& v : d) v = 0.1 * rng.normal();
    }
}

inline Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = sd * rng.normal();
    return Tensor::from_data(std::move(shape), std::move(v));
}

inline Tensor random_mask(std::size_t n, std::size_t s, Rng& rng) {
    std::vector<double> v(n * s * s);
    for (auto& x : v) x = rng.uniform() < 0.4 ? 1.0 : 0.0;
    return Tensor::from_data({n, 1, s, s}, std::move(v));
}

/// Sample ~fraction of each trainable tensor's elements (at least one).
inline std::vector<std::vector<std::size_t>> sample_elements(const std::vector<Tensor>& ts, double fraction, Rng& rng) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& t : ts) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < t.numel(); ++i)
            if (rng.uniform() < fraction) idx.push_back(i);
        if (idx.empty()) idx.push_back(rng.below(t.numel()));
        out.push_back(std::move(idx));
    }
    return out;
}

}  // namespace fixtures
