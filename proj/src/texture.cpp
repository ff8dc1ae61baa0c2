#include "dualprior/texture.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>

#include "dualprior/error.hpp"

namespace dualprior {

namespace {
std::mutex g_fftw_mutex;  // FFTW planning is not thread-safe
}

std::vector<double> power_spectrum(const std::vector<double>& plane, std::size_t n) {
    if (plane.size() != n * n) throw ShapeError("power_spectrum: plane is not n x n");
    std::vector<double> out(n * n);
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    fftw_complex* buf = fftw_alloc_complex(n * n);
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(n), static_cast<int>(n), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    for (std::size_t i = 0; i < n * n; ++i) {
        buf[i][0] = plane[i];
        buf[i][1] = 0.0;
    }
    fftw_execute(plan);
    for (std::size_t i = 0; i < n * n; ++i) out[i] = buf[i][0] * buf[i][0] + buf[i][1] * buf[i][1];
    fftw_destroy_plan(plan);
    fftw_free(buf);
    return out;
}

namespace {

long signed_freq(std::size_t k, std::size_t n) {
    return k < (n + 1) / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

std::size_t ring_of(std::size_t ky, std::size_t kx, std::size_t n) {
    const double fy = static_cast<double>(signed_freq(ky, n));
    const double fx = static_cast<double>(signed_freq(kx, n));
    return static_cast<std::size_t>(std::llround(std::hypot(fx, fy)));
}

}  // namespace

std::vector<double> ring_power(const std::vector<double>& power, std::size_t n) {
    std::vector<double> rings(n / 2 + 1, 0.0);
    for (std::size_t ky = 0; ky < n; ++ky)
        for (std::size_t kx = 0; kx < n; ++kx) {
            const auto r = ring_of(ky, kx, n);
            if (r < rings.size()) rings[r] += power[ky * n + kx];
        }
    return rings;
}

TextureEstimate analyze_texture(const Image& image, const Image& mask, double dominance_threshold) {
    const std::size_t n = image.width;
    if (image.height != n || mask.height != n || mask.width != n) throw ShapeError("analyze_texture: needs square, matching inputs");
    if (mask_area(mask) < kMinMaskArea) throw DataError("analyze_texture: mask area below 16 pixels");

    std::vector<char> region(n * n, 0), eroded(n * n, 0);
    std::size_t interior = 0;
    for (std::size_t i = 0; i < n * n; ++i) region[i] = mask.data[i] >= 0.5;
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const auto i = y * n + x;
            const bool in = region[i] && y > 0 && x > 0 && y + 1 < n && x + 1 < n && region[i - 1] && region[i + 1] &&
                            region[i - n] && region[i + n];
            eroded[i] = in;
            interior += in;
        }
    if (interior >= 8) region = eroded;

    const auto lum = luminance(image);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n * n; ++i) {
        if (region[i]) {
            sum += lum[i];
            ++count;
        }
    }
    const double mu = sum / static_cast<double>(count);
    std::vector<double> plane(n * n, 0.0);
    double var = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) {
        if (region[i]) {
            plane[i] = lum[i] - mu;
            var += plane[i] * plane[i];
        }
    }
    TextureEstimate est;
    est.region_pixels = count;
    est.contrast = std::sqrt(2.0 * var / static_cast<double>(count));

    const auto power = power_spectrum(plane, n);
    auto rings = ring_power(power, n);
    std::vector<std::size_t> ring_count(rings.size(), 0);
    for (std::size_t ky = 0; ky < n; ++ky)
        for (std::size_t kx = 0; kx < n; ++kx) {
            const auto r = ring_of(ky, kx, n);
            if (r < ring_count.size()) ++ring_count[r];
        }
    rings[0] = 0.0;
    double total = 0.0, avg_sum = 0.0, avg_max = 0.0;
    std::size_t peak = 1;
    for (std::size_t r = 1; r < rings.size(); ++r) {
        total += rings[r];
        const double avg = rings[r] / static_cast<double>(ring_count[r]);
        avg_sum += avg;
        avg_max = std::max(avg_max, avg);
        if (rings[r] > rings[peak]) peak = r;
    }
    est.peak_ring = peak;
    const double avg_mean = avg_sum / static_cast<double>(rings.size() - 1);
    est.dominance = avg_mean > 0.0 ? avg_max / avg_mean : 0.0;
    est.dominant = total > 1e-12 && est.dominance >= dominance_threshold;

    const std::size_t lo = std::max<std::size_t>(1, peak - 1);
    const std::size_t hi = std::min(rings.size() - 1, peak + 1);
    double wsum = 0.0, fsum = 0.0;
    for (std::size_t r = lo; r <= hi; ++r) {
        wsum += rings[r];
        fsum += rings[r] * static_cast<double>(r);
    }
    est.frequency = wsum > 0.0 ? fsum / wsum : 0.0;
    return est;
}

double max_frequency_distance(const GeneratorConfig& g) {
    const double f0 = g.canonical_freq();
    return std::max(f0 - 1.0, static_cast<double>(g.image_size / 2) - f0);
}

TextureFidelity texture_fidelity(const Image& image, const Image& mask, const GeneratorConfig& g) {
    TextureFidelity out;
    out.estimate = analyze_texture(image, mask, g.dominance_threshold);
    out.frequency_term = out.estimate.dominant ? std::abs(out.estimate.frequency - g.canonical_freq()) : max_frequency_distance(g);
    out.contrast_term = std::abs(out.estimate.contrast - g.canonical_contrast());
    out.total = out.frequency_term + out.contrast_term;
    return out;
}

}  // namespace dualprior
