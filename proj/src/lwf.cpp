#include "dragkit/lwf.hpp"

#include <algorithm>
#include <cmath>

#include "dragkit/error.hpp"

namespace dragkit {

void LwfParams::validate() const {
    if (!(rho >= 0.0 && rho <= 1.0)) throw Error(ErrorKind::Configuration, "rho must lie in [0, 1]");
    if (!(weight_epsilon > 0.0)) throw Error(ErrorKind::Configuration, "weight_epsilon must be positive");
    if (!(mask_threshold > 0.0 && mask_threshold <= 1.0)) {
        throw Error(ErrorKind::Configuration, "mask_threshold must lie in (0, 1]");
    }
}

double DisplacementField::max_norm() const {
    double m = 0.0;
    for (const auto& v : vectors) m = std::max(m, std::hypot(v.x, v.y));
    return m;
}

std::vector<Point2> scale_drags(const std::vector<PointPair>& pairs, double rho) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw Error(ErrorKind::InvalidInput, "rho must lie in [0, 1]");
    std::vector<Point2> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        out.push_back({rho * (p.target.x - p.handle.x), rho * (p.target.y - p.handle.y)});
    }
    return out;
}

std::vector<double> inverse_distance_weights(Point2 pixel, std::span<const Point2> handles,
                                             double epsilon) {
    if (handles.empty()) throw Error(ErrorKind::InvalidInput, "at least one handle is required");
    std::vector<double> w;
    w.reserve(handles.size());
    double total = 0.0;
    for (const auto& h : handles) {
        const double inv = 1.0 / (std::hypot(pixel.x - h.x, pixel.y - h.y) + epsilon);
        w.push_back(inv);
        total += inv;
    }
    for (double& v : w) v /= total;
    return w;
}

namespace {

// Cells a coordinate may belong to: the nearest one, or both neighbours on an exact tie.
int axis_cells(double c, long long out[2]) {
    const double fl = std::floor(c);
    if (c - fl == 0.5) {
        out[0] = static_cast<long long>(fl);
        out[1] = static_cast<long long>(fl) + 1;
        return 2;
    }
    out[0] = static_cast<long long>(std::floor(c + 0.5));
    return 1;
}

bool inside_support(Point2 p, const SoftMask& mask, double threshold) {
    long long xs[2], ys[2];
    const int nx = axis_cells(p.x, xs);
    const int ny = axis_cells(p.y, ys);
    const auto h = static_cast<long long>(mask.grid.height());
    const auto w = static_cast<long long>(mask.grid.width());
    for (int i = 0; i < ny; ++i) {
        for (int j = 0; j < nx; ++j) {
            if (ys[i] < 0 || xs[j] < 0 || ys[i] >= h || xs[j] >= w) return false;
            if (mask.grid.at(static_cast<std::size_t>(ys[i]), static_cast<std::size_t>(xs[j])) < threshold) {
                return false;
            }
        }
    }
    return true;
}

}  // namespace

double boundary_distance(Point2 origin, Point2 direction, const SoftMask& mask, double threshold) {
    if (!inside_support(origin, mask, threshold)) return 0.0;
    const double limit = 2.0 * static_cast<double>(mask.grid.height() + mask.grid.width());
    double last = 0.0;
    for (double s = 0.5; s <= limit; s += 0.5) {
        const Point2 p{origin.x + s * direction.x, origin.y + s * direction.y};
        if (!inside_support(p, mask, threshold)) break;
        last = s;
    }
    return last;
}

double stretch_factor(Point2 pixel, Point2 handle, Point2 drag, const SoftMask& mask,
                      double threshold) {
    const double len = std::hypot(drag.x, drag.y);
    if (len == 0.0) return 1.0;
    if (pixel.x == handle.x && pixel.y == handle.y) return 1.0;
    const Point2 back{-drag.x / len, -drag.y / len};
    const double from_handle = boundary_distance(handle, back, mask, threshold);
    if (from_handle == 0.0) return 1.0;
    const double from_pixel = boundary_distance(pixel, back, mask, threshold);
    return std::clamp(from_pixel / from_handle, 0.0, 1.0);
}

DisplacementField compute_displacement_field(const SoftMask& mask, const std::vector<PointPair>& pairs,
                                             const LwfParams& params) {
    params.validate();
    if (pairs.empty()) throw Error(ErrorKind::InvalidInput, "displacement field needs at least one pair");
    const Dims dims{mask.grid.height(), mask.grid.width()};
    for (const auto& p : pairs) {
        if (!contains(dims, p.handle) || !contains(dims, p.target)) {
            throw Error(ErrorKind::InvalidInput, "pair lies outside the mask grid");
        }
    }
    if (!(mask.grid.max() > 0.0)) throw Error(ErrorKind::DegenerateMask, "mask has no support");

    const std::vector<Point2> drags = scale_drags(pairs, params.rho);
    std::vector<Point2> handles;
    handles.reserve(pairs.size());
    for (const auto& p : pairs) handles.push_back({double(p.handle.x), double(p.handle.y)});

    // Boundary distances from each handle do not depend on the pixel.
    std::vector<double> handle_reach(pairs.size(), 0.0);
    std::vector<Point2> back(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const double len = std::hypot(drags[i].x, drags[i].y);
        if (len > 0.0) {
            back[i] = {-drags[i].x / len, -drags[i].y / len};
            handle_reach[i] = boundary_distance(handles[i], back[i], mask, params.mask_threshold);
        }
    }

    DisplacementField field;
    field.height = dims.height;
    field.width = dims.width;
    field.vectors.assign(dims.height * dims.width, Point2{});
    field.support.assign(dims.height * dims.width, 0);
    for (std::size_t y = 0; y < dims.height; ++y) {
        for (std::size_t x = 0; x < dims.width; ++x) {
            if (mask.grid.at(y, x) < params.mask_threshold) continue;
            const std::size_t idx = y * dims.width + x;
            field.support[idx] = 1;
            const Point2 pixel{double(x), double(y)};
            const auto weights = inverse_distance_weights(pixel, handles, params.weight_epsilon);
            Point2 v{};
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                if (drags[i].x == 0.0 && drags[i].y == 0.0) continue;
                double lambda = 1.0;
                const bool at_handle = pixel.x == handles[i].x && pixel.y == handles[i].y;
                if (!at_handle && handle_reach[i] > 0.0) {
                    const double reach = boundary_distance(pixel, back[i], mask, params.mask_threshold);
                    lambda = std::clamp(reach / handle_reach[i], 0.0, 1.0);
                }
                v.x += weights[i] * lambda * drags[i].x;
                v.y += weights[i] * lambda * drags[i].y;
            }
            field.vectors[idx] = v;
        }
    }
    return field;
}

LatentField warp_latent(const LatentField& latent, const DisplacementField& field) {
    if (field.height != latent.height() || field.width != latent.width()) {
        throw Error(ErrorKind::InvalidInput, "displacement field and latent have different shapes");
    }
    LatentField out = latent;
    for (std::size_t c = 0; c < latent.channels(); ++c) {
        const PlaneView src = latent.channel(c);
        for (std::size_t y = 0; y < latent.height(); ++y) {
            for (std::size_t x = 0; x < latent.width(); ++x) {
                if (!field.supported(y, x)) continue;
                const Point2& v = field.at(y, x);
                if (v.x == 0.0 && v.y == 0.0) continue;
                out.at(c, y, x) = sample_bilinear(src, {double(x) - v.x, double(y) - v.y});
            }
        }
    }
    return out;
}

}  // namespace dragkit
