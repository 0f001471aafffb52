#include "dragkit/softmask.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#include "dragkit/error.hpp"

namespace dragkit {

namespace {

std::string describe(Pixel p) {
    return "(" + std::to_string(p.x) + ", " + std::to_string(p.y) + ")";
}

// round(num / den) with ties away from zero, den > 0.
long long round_ratio(long long num, long long den) {
    const long long twice = 2 * num;
    if (num >= 0) return (twice + den) / (2 * den);
    return -((-twice + den) / (2 * den));
}

}  // namespace

bool contains(Dims dims, Pixel p) {
    return p.x >= 0 && p.y >= 0 && static_cast<std::size_t>(p.x) < dims.width &&
           static_cast<std::size_t>(p.y) < dims.height;
}

PathRaster rasterize_drag_path(const PointPair& pair, Dims dims) {
    if (!contains(dims, pair.handle)) {
        throw Error(ErrorKind::InvalidInput, "handle " + describe(pair.handle) + " is outside the image");
    }
    if (!contains(dims, pair.target)) {
        throw Error(ErrorKind::InvalidInput, "target " + describe(pair.target) + " is outside the image");
    }
    const long long dx = pair.target.x - pair.handle.x;
    const long long dy = pair.target.y - pair.handle.y;
    const long long span = std::max(std::llabs(dx), std::llabs(dy));

    PathRaster raster;
    raster.sample_count = static_cast<std::size_t>(span + 1);
    raster.blend_weights.reserve(raster.sample_count);
    raster.cells.reserve(raster.sample_count);
    if (span == 0) {
        raster.blend_weights.push_back(0.0);
        raster.cells.push_back(pair.handle);
        return raster;
    }
    for (long long k = 0; k <= span; ++k) {
        raster.blend_weights.push_back(static_cast<double>(k) / static_cast<double>(span));
        // (1 - a) * p0 + a * p1 = p0 + k * (p1 - p0) / span
        const long long x = round_ratio(pair.handle.x * span + k * dx, span);
        const long long y = round_ratio(pair.handle.y * span + k * dy, span);
        raster.cells.push_back({static_cast<int>(x), static_cast<int>(y)});
    }
    return raster;
}

ScalarGrid2D accumulate_paths(const std::vector<PointPair>& pairs, Dims dims) {
    ScalarGrid2D marks(dims.height, dims.width, 0.0);
    for (const auto& pair : pairs) {
        for (const Pixel& cell : rasterize_drag_path(pair, dims).cells) {
            marks.at(static_cast<std::size_t>(cell.y), static_cast<std::size_t>(cell.x)) = 1.0;
        }
    }
    return marks;
}

SoftMask generate_soft_mask(const std::vector<PointPair>& pairs, Dims dims, double sigma) {
    if (pairs.empty()) throw Error(ErrorKind::InvalidInput, "soft mask needs at least one point pair");
    if (!(sigma >= 0.0)) throw Error(ErrorKind::InvalidInput, "mask sigma must be non-negative");
    const ScalarGrid2D marks = accumulate_paths(pairs, dims);
    return {normalize_max(gaussian_blur(marks, sigma)), sigma};
}

std::vector<PointPair> downscale_pairs(const std::vector<PointPair>& pairs, std::size_t factor) {
    if (factor == 0) throw Error(ErrorKind::InvalidInput, "downscale factor must be positive");
    const auto f = static_cast<long long>(factor);
    auto scale = [f](Pixel p) {
        return Pixel{static_cast<int>(round_ratio(p.x, f)), static_cast<int>(round_ratio(p.y, f))};
    };
    std::vector<PointPair> out;
    out.reserve(pairs.size());
    for (const auto& pair : pairs) out.push_back({scale(pair.handle), scale(pair.target)});
    return out;
}

SoftMask generate_soft_mask_at_scale(const std::vector<PointPair>& pairs, Dims image_dims,
                                     double image_sigma, std::size_t factor) {
    if (factor == 0 || image_dims.height % factor != 0 || image_dims.width % factor != 0) {
        throw Error(ErrorKind::InvalidInput, "image dimensions must be divisible by the scale factor");
    }
    for (const auto& pair : pairs) {
        if (!contains(image_dims, pair.handle) || !contains(image_dims, pair.target)) {
            throw Error(ErrorKind::InvalidInput,
                        "pair " + describe(pair.handle) + " -> " + describe(pair.target) +
                            " is outside the image");
        }
    }
    const Dims small{image_dims.height / factor, image_dims.width / factor};
    std::vector<PointPair> scaled = downscale_pairs(pairs, factor);
    for (auto& pair : scaled) {
        pair.handle.x = std::min(pair.handle.x, static_cast<int>(small.width) - 1);
        pair.handle.y = std::min(pair.handle.y, static_cast<int>(small.height) - 1);
        pair.target.x = std::min(pair.target.x, static_cast<int>(small.width) - 1);
        pair.target.y = std::min(pair.target.y, static_cast<int>(small.height) - 1);
    }
    return generate_soft_mask(scaled, small, image_sigma / static_cast<double>(factor));
}

}  // namespace dragkit
