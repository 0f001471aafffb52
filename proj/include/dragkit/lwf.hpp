#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dragkit/fields.hpp"
#include "dragkit/softmask.hpp"

namespace dragkit {

struct LwfParams {
    double rho = 0.15;             // fraction of each drag vector applied at initialization
    double weight_epsilon = 1e-6;  // guards 1 / distance at the handle itself
    double mask_threshold = 0.5;   // cells with M >= threshold are displaced

    void validate() const;
};

struct DisplacementField {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Point2> vectors;   // (dx, dy) per cell, row-major
    std::vector<std::uint8_t> support;

    const Point2& at(std::size_t y, std::size_t x) const { return vectors[y * width + x]; }
    bool supported(std::size_t y, std::size_t x) const { return support[y * width + x] != 0; }
    double max_norm() const;
};

std::vector<Point2> scale_drags(const std::vector<PointPair>& pairs, double rho);

// Normalized reciprocal-distance weights of `pixel` to each handle; they sum to one.
std::vector<double> inverse_distance_weights(Point2 pixel, std::span<const Point2> handles,
                                             double epsilon);

// Ratio of the pixel's and the handle's distances to the supported-region boundary,
// both measured by marching against the drag direction. Clamped to [0, 1].
double stretch_factor(Point2 pixel, Point2 handle, Point2 drag, const SoftMask& mask,
                      double threshold);

// Distance from `origin` to the supported-region boundary along `direction`
// (unit vector), sampled in half-cell steps.
double boundary_distance(Point2 origin, Point2 direction, const SoftMask& mask, double threshold);

DisplacementField compute_displacement_field(const SoftMask& mask, const std::vector<PointPair>& pairs,
                                             const LwfParams& params);

// Backward warp: out(p) = in(p - v(p)) for supported cells; others are copied.
LatentField warp_latent(const LatentField& latent, const DisplacementField& field);

}  // namespace dragkit
