#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualprior/image.hpp"
#include "dualprior/model.hpp"
#include "dualprior/schedule.hpp"

namespace dualprior {

struct SampleConfig {
    std::size_t steps = 50;
    double eta = 0.0;
    double lambda = 9.0;  // guidance scale
    std::uint64_t seed = 0;
    std::size_t batch = 8;  // rows per forward pass

    void validate(std::size_t T) const;
};

nlohmann::json sample_config_to_json(const SampleConfig& c);
SampleConfig sample_config_from_json(const nlohmann::json& j);

/// eps_hat(z_t, t) for a batch; t holds one timestep per row.
using NoisePredictor = std::function<Tensor(const Tensor& z_t, std::span<const std::size_t> t)>;

/// z_T with row n drawn from its own stream seeded by seeds[n].
Tensor initial_noise(std::span<const std::uint64_t> seeds, const Shape& sample_shape);

/// Deterministic DDIM over ddim_timesteps(s, steps), ending at the clean
/// estimate; the result is clamped to [-1, 1].
Tensor ddim_sample(const NoisePredictor& predict, Tensor z_T, std::size_t steps, const NoiseSchedule& s);

/// Mask-only synthesis with classifier-free guidance. masks: [N, 1, S, S]
/// binary. Row n starts from the stream seeded by derive_seed(cfg.seed, n).
Tensor sample(const SiameseModel& m, const Tensor& masks, const SampleConfig& cfg, const NoiseSchedule& s);
/// Same with an explicit stream seed per row.
Tensor sample_with_seeds(const SiameseModel& m, const Tensor& masks, std::span<const std::uint64_t> row_seeds,
                         const SampleConfig& cfg, const NoiseSchedule& s);

struct MaskInput {
    std::string source;  // where the mask came from, recorded in the manifest
    Image mask;
};

struct GridEntry {
    std::size_t mask_index = 0;
    std::string mask_file;    // source of the mask
    std::string mask_copy;    // grayscale copy, relative to the manifest
    std::uint64_t seed = 0;   // user-facing seed
    std::uint64_t stream = 0; // derive_seed(seed, mask_index)
    std::string output_file;  // relative to the manifest
};

struct SampleManifest {
    SampleConfig config;
    std::vector<GridEntry> entries;
};

nlohmann::json sample_manifest_to_json(const SampleManifest& m);
SampleManifest sample_manifest_from_json(const nlohmann::json& j);

/// Samples every (mask, seed) pair, writing images/m{i}_s{seed}.png, masks/m{i}.png
/// and manifest.json under out_dir. Returns the manifest.
SampleManifest sample_grid(const SiameseModel& m, const std::vector<MaskInput>& masks,
                           std::span<const std::uint64_t> seeds, const SampleConfig& cfg, const NoiseSchedule& s,
                           const std::filesystem::path& out_dir);

/// In-memory grid: images[i * seeds.size() + j] for mask i, seed j.
std::vector<Image> sample_images(const SiameseModel& m, const std::vector<Image>& masks,
                                 std::span<const std::uint64_t> seeds, const SampleConfig& cfg, const NoiseSchedule& s);

}  // namespace dualprior
