#pragma once

#include <cstddef>
#include <vector>

#include "dragkit/fields.hpp"

namespace dragkit {

// Integer pixel coordinate; origin top-left, x rightward, y downward.
struct Pixel {
    int x = 0;
    int y = 0;
    bool operator==(const Pixel&) const = default;
};

struct PointPair {
    Pixel handle;
    Pixel target;
    bool operator==(const PointPair&) const = default;
};

struct Dims {
    std::size_t height = 0;
    std::size_t width = 0;
    bool operator==(const Dims&) const = default;
};

bool contains(Dims dims, Pixel p);

struct PathRaster {
    std::size_t sample_count = 0;
    std::vector<double> blend_weights;  // alpha_k = k / (N - 1); {0} when N == 1
    std::vector<Pixel> cells;
};

struct SoftMask {
    ScalarGrid2D grid;
    double sigma = 0.0;
};

// N = max(|dx|, |dy|) + 1 samples along the segment, each rounded to the nearest
// cell with ties away from zero. Positions are evaluated in exact integer arithmetic.
PathRaster rasterize_drag_path(const PointPair& pair, Dims dims);

// Binary union of all path rasters (the unblurred mask).
ScalarGrid2D accumulate_paths(const std::vector<PointPair>& pairs, Dims dims);

SoftMask generate_soft_mask(const std::vector<PointPair>& pairs, Dims dims, double sigma);

// Rescales pair coordinates by 1/factor (rounded to nearest) for use on a smaller grid.
std::vector<PointPair> downscale_pairs(const std::vector<PointPair>& pairs, std::size_t factor);

// Mask regenerated on a grid `factor` times smaller, with sigma scaled accordingly.
SoftMask generate_soft_mask_at_scale(const std::vector<PointPair>& pairs, Dims image_dims,
                                     double image_sigma, std::size_t factor);

}  // namespace dragkit
