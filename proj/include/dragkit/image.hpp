#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dragkit/fields.hpp"
#include "dragkit/softmask.hpp"

namespace dragkit {

// Interleaved RGB image with channel values in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), rgb(h * w * 3, fill) {}

    double& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
    Dims dims() const { return {height, width}; }
};

// 8-bit quantisation used for every image written to disk.
std::vector<std::uint8_t> to_rgb8(const Image& image);
Image from_rgb8(std::size_t height, std::size_t width, const std::vector<std::uint8_t>& data);

Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(const std::vector<std::uint8_t>& bytes);

// Grayscale export of a [0, 1] grid, value = round(255 * M).
std::vector<std::uint8_t> encode_gray_png(const ScalarGrid2D& grid);
void write_gray_png(const ScalarGrid2D& grid, const std::filesystem::path& path);
ScalarGrid2D decode_gray_png(const std::vector<std::uint8_t>& bytes);

// Toy VAE: box-mean downsampling to a 4-channel latent (RGB in [-1, 1] plus
// luminance), and bilinear upsampling of the RGB channels back to pixels.
constexpr std::size_t kLatentChannels = 4;
LatentField encode_image(const Image& image, std::size_t factor);
Image decode_latent(const LatentField& latent, std::size_t factor);

double mean_absolute_error(const Image& a, const Image& b);
// MAE restricted to pixels where `include` is non-zero.
double mean_absolute_error(const Image& a, const Image& b, const std::vector<std::uint8_t>& include);

}  // namespace dragkit
