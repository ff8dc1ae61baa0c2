#include "dualprior/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "dualprior/error.hpp"

namespace dualprior {

std::uint8_t quantize_pixel(double v) {
    const double q = std::round((v + 1.0) * 0.5 * 255.0);
    return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

double dequantize_pixel(std::uint8_t q) { return static_cast<double>(q) / 255.0 * 2.0 - 1.0; }

Image quantize_roundtrip(const Image& img) {
    Image out = img;
    for (auto& v : out.data) v = dequantize_pixel(quantize_pixel(v));
    return out;
}

std::vector<double> luminance(const Image& img) {
    std::vector<double> out(img.pixels(), 0.0);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t i = 0; i < img.pixels(); ++i) out[i] += img.data[c * img.pixels() + i];
    for (auto& v : out) v /= static_cast<double>(img.channels);
    return out;
}

std::size_t mask_area(const Image& mask) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.pixels(); ++i) n += mask.data[i] >= 0.5;
    return n;
}

Tensor stack_images(std::span<const Image* const> images) {
    if (images.empty()) throw ShapeError("stack_images: empty list");
    const Image& f = *images[0];
    std::vector<double> out;
    out.reserve(images.size() * f.data.size());
    for (const Image* im : images) {
        if (im->channels != f.channels || im->height != f.height || im->width != f.width) {
            throw ShapeError("stack_images: dimension mismatch");
        }
        out.insert(out.end(), im->data.begin(), im->data.end());
    }
    return Tensor::from_data({images.size(), f.channels, f.height, f.width}, std::move(out));
}

Tensor stack_images(std::span<const Image> images) {
    std::vector<const Image*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    return stack_images(std::span<const Image* const>(ptrs));
}

Image tensor_sample(const Tensor& batch, std::size_t index) {
    if (batch.rank() != 4 || index >= batch.dim(0)) throw ShapeError("tensor_sample: bad batch or index");
    Image out(batch.dim(1), batch.dim(2), batch.dim(3));
    std::copy_n(batch.data().begin() + index * out.data.size(), out.data.size(), out.data.begin());
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png_bytes(const std::filesystem::path& path, std::size_t w, std::size_t h, int color_type,
                     const std::vector<std::uint8_t>& rows_data, std::size_t row_bytes) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed for " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // No timestamps or text chunks, so bytes depend only on pixels.
    png_write_info(png, info);
    for (std::size_t y = 0; y < h; ++y) {
        png_write_row(png, const_cast<png_bytep>(rows_data.data() + y * row_bytes));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw DataError("PNG output needs 1 or 3 channels");
    const std::size_t row = img.width * img.channels;
    std::vector<std::uint8_t> bytes(row * img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c) bytes[y * row + x * img.channels + c] = quantize_pixel(img.at(c, y, x));
    write_png_bytes(path, img.width, img.height, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, bytes, row);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw DataError("not a PNG file: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed for " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const std::size_t channels = png_get_channels(png, info);
    const std::size_t row = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> bytes(row * h);
    std::vector<png_bytep> rows(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = bytes.data() + y * row;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(channels, h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < channels; ++c) img.at(c, y, x) = dequantize_pixel(bytes[y * row + x * channels + c]);
    return img;
}

void write_mask_png(const std::filesystem::path& path, const Image& mask) {
    if (mask.channels != 1) throw DataError("mask PNG needs a single channel");
    std::vector<std::uint8_t> bytes(mask.pixels());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.data[i] >= 0.5 ? 255 : 0;
    write_png_bytes(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, bytes, mask.width);
}

Image read_mask_png(const std::filesystem::path& path) {
    Image img = read_png(path);
    Image mask(1, img.height, img.width);
    const auto lum = luminance(img);
    // Threshold at byte value 128.
    for (std::size_t i = 0; i < lum.size(); ++i) mask.data[i] = lum[i] >= dequantize_pixel(128) ? 1.0 : 0.0;
    return mask;
}

}  // namespace dualprior
