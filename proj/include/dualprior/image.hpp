#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dualprior/tensor.hpp"

namespace dualprior {

/// Planar [channels, height, width] image of doubles. Images live in [-1, 1],
/// masks in {0, 1}.
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
    std::size_t pixels() const { return height * width; }
    bool operator==(const Image&) const = default;
};

/// [-1, 1] -> [0, 255]: round-half-away-from-zero of (v + 1) / 2 * 255, clamped.
std::uint8_t quantize_pixel(double v);
double dequantize_pixel(std::uint8_t q);
Image quantize_roundtrip(const Image& img);

/// Channel-mean luminance plane.
std::vector<double> luminance(const Image& img);
std::size_t mask_area(const Image& mask);

/// Stack images into a [N, C, H, W] tensor (all must share dimensions).
Tensor stack_images(std::span<const Image> images);
Tensor stack_images(std::span<const Image* const> images);
Image tensor_sample(const Tensor& batch, std::size_t index);

/// 8-bit PNG I/O. Images with 3 channels are RGB, 1 channel grayscale.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);
/// Binary mask PNG: {0, 255} on write, thresholded at 128 on read.
void write_mask_png(const std::filesystem::path& path, const Image& mask);
Image read_mask_png(const std::filesystem::path& path);

}  // namespace dualprior
