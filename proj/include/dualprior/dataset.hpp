#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualprior/image.hpp"

namespace dualprior {

/// Procedural lesion-on-background generator settings. Every field is a key
/// of the plain-text generator config (see README).
struct GeneratorConfig {
    std::size_t image_size = 32;
    std::size_t channels = 3;
    double min_axis = 4.0;  // semi-axis range, pixels
    double max_axis = 10.0;
    double center_margin = 9.0;  // lesion centre kept this far from the border
    double blob_fraction = 0.5;
    double blob_amp_min = 0.1;
    double blob_amp_max = 0.25;
    // Lesion texture: luminance sinusoid, frequency in cycles per image width.
    double texture_freq_min = 5.5;
    double texture_freq_max = 6.5;
    double texture_contrast_min = 0.22;  // sinusoid amplitude
    double texture_contrast_max = 0.28;
    double lesion_offset_min = 0.45;  // lesion mean brightness above background
    double lesion_offset_max = 0.6;
    double mean_contrast = 0.3;  // guaranteed inside-vs-outside mean gap
    double bg_gradient_amplitude = 0.08;
    double noise_sigma = 0.02;
    std::array<double, 3> bg_color{-0.35, -0.45, -0.4};
    std::array<double, 3> lesion_tint{1.2, 0.9, 0.9};
    // Ring-average spectral peak over mean required to call a texture present.
    double dominance_threshold = 2.5;

    double canonical_freq() const { return 0.5 * (texture_freq_min + texture_freq_max); }
    double canonical_contrast() const { return 0.5 * (texture_contrast_min + texture_contrast_max); }
    /// Largest texture_fidelity error a faithful lesion can show: half the
    /// frequency jitter + one frequency bin + half the contrast jitter + noise.
    double texture_noise_floor() const;
    void validate() const;
};

nlohmann::json generator_config_to_json(const GeneratorConfig& g);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

enum class LesionShape { kEllipse, kBlob };

struct LesionMeta {
    LesionShape shape = LesionShape::kEllipse;
    double center_x = 0, center_y = 0;
    double axis_a = 0, axis_b = 0;
    double rotation = 0;
    int blob_lobes = 0;
    double blob_amp = 0, blob_phase = 0;
    double texture_freq = 0, texture_orientation = 0, texture_contrast = 0, texture_phase = 0;
    double lesion_offset = 0;
    double bg_freq_x = 0, bg_freq_y = 0, bg_phase = 0;
    double noise_sigma = 0;
};

nlohmann::json meta_to_json(const LesionMeta& m);
LesionMeta meta_from_json(const nlohmann::json& j);

struct PairedSample {
    std::string id;
    Image image;  // [C, S, S] in [-1, 1]
    Image mask;   // [1, S, S] in {0, 1}
    std::optional<LesionMeta> meta;
};

/// Sample i is a pure function of (seed, i, config).
PairedSample generate_sample(const GeneratorConfig& g, std::uint64_t seed, std::size_t index);
std::vector<PairedSample> generate_dataset(std::size_t n, const GeneratorConfig& g, std::uint64_t seed);

enum class MaskTransformKind { kScale, kTranslate, kRotate, kElastic };

/// Magnitude is drawn uniformly from [magnitude_min, magnitude_max] on every
/// attempt: scale factor, shift in pixels, rotation in radians, or elastic
/// displacement amplitude in pixels.
struct MaskTransform {
    MaskTransformKind kind = MaskTransformKind::kScale;
    double magnitude_min = 1.0;
    double magnitude_max = 1.0;
    std::uint64_t seed = 0;
};

MaskTransformKind parse_mask_transform_kind(const std::string& s);
std::string mask_transform_kind_name(MaskTransformKind k);

/// Rejection-resampled until the result keeps area >= 16 and at least 75% of
/// the area the transform should produce (nothing pushed off the canvas).
/// Throws DataError after 100 failed attempts.
Image transform_mask(const Image& mask, const MaskTransform& t);

inline constexpr std::size_t kMinMaskArea = 16;

/// data/{images,masks,meta}/NNNN.{png,png,json}
void save_dataset(const std::filesystem::path& dir, const std::vector<PairedSample>& samples);
/// Loads every images/*.png with its mask; a missing meta sidecar leaves meta empty.
std::vector<PairedSample> load_dataset(const std::filesystem::path& dir);
PairedSample load_sample(const std::filesystem::path& image, const std::filesystem::path& mask,
                         const std::filesystem::path& meta);
std::string sample_file_stem(std::size_t index);

}  // namespace dualprior
