#include "dragkit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dragkit/error.hpp"

namespace dragkit {

namespace {

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct PngWriteBuffer {
    std::vector<std::uint8_t> bytes;
};

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
    buf->bytes.insert(buf->bytes.end(), data, data + length);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_error_to_exception(png_structp, png_const_charp msg) {
    throw Error(ErrorKind::Io, std::string("png: ") + msg);
}

void png_warning_ignore(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode_png_raw(std::size_t height, std::size_t width, int color_type, int channels,
                                         const std::vector<std::uint8_t>& pixels) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_to_exception,
                                              png_warning_ignore);
    if (!png) throw Error(ErrorKind::Io, "png: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    PngWriteBuffer buf;
    try {
        png_set_write_fn(png, &buf, png_write_to_vector, png_flush_noop);
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (std::size_t y = 0; y < height; ++y) {
            png_write_row(png, const_cast<png_bytep>(&pixels[y * width * channels]));
        }
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return std::move(buf.bytes);
}

struct PngReadBuffer {
    const std::vector<std::uint8_t>* bytes;
    std::size_t offset;
};

void png_read_from_vector(png_structp png, png_bytep out, png_size_t length) {
    auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
    if (buf->offset + length > buf->bytes->size()) png_error(png, "unexpected end of data");
    std::memcpy(out, buf->bytes->data() + buf->offset, length);
    buf->offset += length;
}

// Decodes any PNG to 8-bit with the requested number of channels (1 = gray, 3 = RGB).
std::vector<std::uint8_t> decode_png_raw(const std::vector<std::uint8_t>& bytes, int channels,
                                         std::size_t& height, std::size_t& width) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw Error(ErrorKind::Io, "data is not a PNG image");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_to_exception,
                                             png_warning_ignore);
    if (!png) throw Error(ErrorKind::Io, "png: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    PngReadBuffer buf{&bytes, 0};
    std::vector<std::uint8_t> pixels;
    try {
        png_set_read_fn(png, &buf, png_read_from_vector);
        png_read_info(png, info);
        width = png_get_image_width(png, info);
        height = png_get_image_height(png, info);
        const int color = png_get_color_type(png, info);
        if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        const bool is_gray = (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA);
        if (channels == 3 && is_gray) png_set_gray_to_rgb(png);
        if (channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
        png_read_update_info(png, info);
        if (png_get_rowbytes(png, info) != width * static_cast<std::size_t>(channels)) {
            throw Error(ErrorKind::Io, "unsupported PNG pixel layout");
        }
        pixels.resize(height * width * static_cast<std::size_t>(channels));
        for (std::size_t y = 0; y < height; ++y) png_read_row(png, &pixels[y * width * channels], nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return pixels;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

std::vector<std::uint8_t> to_rgb8(const Image& image) {
    std::vector<std::uint8_t> out(image.rgb.size());
    std::transform(image.rgb.begin(), image.rgb.end(), out.begin(), quantize);
    return out;
}

Image from_rgb8(std::size_t height, std::size_t width, const std::vector<std::uint8_t>& data) {
    if (data.size() != height * width * 3) throw Error(ErrorKind::InvalidInput, "RGB buffer has the wrong size");
    Image img(height, width);
    for (std::size_t i = 0; i < data.size(); ++i) img.rgb[i] = data[i] / 255.0;
    return img;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    return encode_png_raw(image.height, image.width, PNG_COLOR_TYPE_RGB, 3, to_rgb8(image));
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
    std::size_t h = 0, w = 0;
    const auto pixels = decode_png_raw(bytes, 3, h, w);
    return from_rgb8(h, w, pixels);
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

void write_png(const Image& image, const std::filesystem::path& path) { write_file(path, encode_png(image)); }

std::vector<std::uint8_t> encode_gray_png(const ScalarGrid2D& grid) {
    std::vector<std::uint8_t> pixels(grid.size());
    std::transform(grid.values().begin(), grid.values().end(), pixels.begin(), quantize);
    return encode_png_raw(grid.height(), grid.width(), PNG_COLOR_TYPE_GRAY, 1, pixels);
}

void write_gray_png(const ScalarGrid2D& grid, const std::filesystem::path& path) {
    write_file(path, encode_gray_png(grid));
}

ScalarGrid2D decode_gray_png(const std::vector<std::uint8_t>& bytes) {
    std::size_t h = 0, w = 0;
    const auto pixels = decode_png_raw(bytes, 1, h, w);
    std::vector<double> values(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) values[i] = pixels[i] / 255.0;
    return ScalarGrid2D(h, w, std::move(values));
}

LatentField encode_image(const Image& image, std::size_t factor) {
    if (factor == 0 || image.height == 0 || image.width == 0 || image.height % factor != 0 ||
        image.width % factor != 0) {
        throw Error(ErrorKind::InvalidInput, "image dimensions must be positive multiples of the latent factor " +
                                                 std::to_string(factor));
    }
    const std::size_t h = image.height / factor;
    const std::size_t w = image.width / factor;
    LatentField z(kLatentChannels, h, w, 0);
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double sum[3] = {0.0, 0.0, 0.0};
            for (std::size_t dy = 0; dy < factor; ++dy) {
                for (std::size_t dx = 0; dx < factor; ++dx) {
                    for (std::size_t c = 0; c < 3; ++c) sum[c] += image.at(y * factor + dy, x * factor + dx, c);
                }
            }
            double lum = 0.0;
            constexpr double kLuma[3] = {0.299, 0.587, 0.114};
            for (std::size_t c = 0; c < 3; ++c) {
                const double mean = sum[c] * inv;
                z.at(c, y, x) = 2.0 * mean - 1.0;
                lum += kLuma[c] * mean;
            }
            z.at(3, y, x) = 2.0 * lum - 1.0;
        }
    }
    return z;
}

Image decode_latent(const LatentField& latent, std::size_t factor) {
    if (latent.channels() < 3) throw Error(ErrorKind::InvalidInput, "latent needs at least 3 channels to decode");
    Image img(latent.height() * factor, latent.width() * factor);
    const double f = static_cast<double>(factor);
    const double centre = (f - 1.0) / 2.0;
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const Point2 p{(double(x) - centre) / f, (double(y) - centre) / f};
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = sample_bilinear(latent.channel(c), p);
                img.at(y, x, c) = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
            }
        }
    }
    return img;
}

double mean_absolute_error(const Image& a, const Image& b) {
    return mean_absolute_error(a, b, std::vector<std::uint8_t>(a.height * a.width, 1));
}

double mean_absolute_error(const Image& a, const Image& b, const std::vector<std::uint8_t>& include) {
    if (a.height != b.height || a.width != b.width) throw Error(ErrorKind::InvalidInput, "image sizes differ");
    if (include.size() != a.height * a.width) throw Error(ErrorKind::InvalidInput, "pixel selection has the wrong size");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < include.size(); ++i) {
        if (!include[i]) continue;
        for (std::size_t c = 0; c < 3; ++c) total += std::abs(a.rgb[i * 3 + c] - b.rgb[i * 3 + c]);
        count += 3;
    }
    if (count == 0) throw Error(ErrorKind::InvalidInput, "no pixels selected");
    return total / static_cast<double>(count);
}

}  // namespace dragkit
