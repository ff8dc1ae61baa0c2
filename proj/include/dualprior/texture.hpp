#pragma once

#include <cstddef>
#include <vector>

#include "dualprior/dataset.hpp"
#include "dualprior/image.hpp"

namespace dualprior {

/// 2-D power spectrum |DFT|^2 of an n x n plane, row-major, DC at index 0.
std::vector<double> power_spectrum(const std::vector<double>& plane, std::size_t n);

/// Power summed over integer rings r = round(|k|), r = 0..n/2. Frequencies
/// beyond n/2 (the square's corners) are dropped.
std::vector<double> ring_power(const std::vector<double>& power, std::size_t n);

struct TextureEstimate {
    double frequency = 0.0;  // cycles per image width, ring-centroid around the peak
    std::size_t peak_ring = 0;
    double dominance = 0.0;  // peak ring-average power / mean ring-average power
    bool dominant = false;
    double contrast = 0.0;   // sqrt(2) * luminance std in the analysed region
    std::size_t region_pixels = 0;
};

/// Analyses the luminance inside the mask, eroded by one pixel when at least
/// 8 interior pixels remain. Requires mask area >= 16.
TextureEstimate analyze_texture(const Image& image, const Image& mask, double dominance_threshold);

struct TextureFidelity {
    double frequency_term = 0.0;
    double contrast_term = 0.0;
    double total = 0.0;
    TextureEstimate estimate;
};

/// |f_est - f_canonical| + |contrast_est - contrast_canonical|. Without a
/// dominant spectral peak the frequency term is the largest possible bin
/// distance, max(f_canonical - 1, n/2 - f_canonical).
TextureFidelity texture_fidelity(const Image& image, const Image& mask, const GeneratorConfig& g);
double max_frequency_distance(const GeneratorConfig& g);

}  // namespace dualprior
