#include "dragkit/fields.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dragkit/error.hpp"

namespace dragkit {

namespace {

void require_dims(std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) {
        throw Error(ErrorKind::InvalidInput, "grid dimensions must be at least 1x1");
    }
}

void require_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) throw Error(ErrorKind::InvalidInput, "grid contains a non-finite value");
    }
}

std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
    if (i < 0) return 0;
    if (static_cast<std::size_t>(i) >= n) return n - 1;
    return static_cast<std::size_t>(i);
}

// Lower cell index and fractional offset along one axis after clamping.
struct AxisCoord {
    std::size_t lo = 0;
    std::size_t hi = 0;
    double frac = 0.0;
    bool clamped = false;
};

AxisCoord axis_coord(double p, std::size_t n) {
    AxisCoord a;
    const double upper = static_cast<double>(n - 1);
    double c = p;
    if (c < 0.0) {
        c = 0.0;
        a.clamped = true;
    } else if (c > upper) {
        c = upper;
        a.clamped = true;
    }
    if (n == 1) return a;
    auto lo = static_cast<std::size_t>(std::floor(c));
    lo = std::min(lo, n - 2);
    a.lo = lo;
    a.hi = lo + 1;
    a.frac = c - static_cast<double>(lo);
    return a;
}

}  // namespace

ScalarGrid2D::ScalarGrid2D(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), values_(height * width, fill) {
    require_dims(height, width);
}

ScalarGrid2D::ScalarGrid2D(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
    require_dims(height, width);
    if (values_.size() != height * width) {
        throw Error(ErrorKind::InvalidInput, "value count does not match grid dimensions");
    }
    require_finite(values_);
}

double ScalarGrid2D::max() const { return *std::max_element(values_.begin(), values_.end()); }

double ScalarGrid2D::sum() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s;
}

LatentField::LatentField(std::size_t channels, std::size_t height, std::size_t width, int timestep,
                         double fill)
    : channels_(channels), height_(height), width_(width), timestep_(timestep),
      values_(channels * height * width, fill) {
    require_dims(height, width);
    if (channels == 0) throw Error(ErrorKind::InvalidInput, "latent needs at least one channel");
}

LatentField::LatentField(std::size_t channels, std::size_t height, std::size_t width, int timestep,
                         std::vector<double> values)
    : channels_(channels), height_(height), width_(width), timestep_(timestep),
      values_(std::move(values)) {
    require_dims(height, width);
    if (channels == 0) throw Error(ErrorKind::InvalidInput, "latent needs at least one channel");
    if (values_.size() != channels * height * width) {
        throw Error(ErrorKind::InvalidInput, "value count does not match latent shape");
    }
    require_finite(values_);
}

PlaneView LatentField::channel(std::size_t c) const {
    return {height_, width_, std::span<const double>(values_).subspan(c * plane_size(), plane_size())};
}

MutablePlaneView LatentField::mutable_channel(std::size_t c) {
    return {height_, width_, std::span<double>(values_).subspan(c * plane_size(), plane_size())};
}

std::size_t FeatureField::vector_size() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.channels();
    return n;
}

BilinearSample sample_bilinear_with_grad(const PlaneView& plane, Point2 point) {
    if (!std::isfinite(point.x) || !std::isfinite(point.y)) {
        throw Error(ErrorKind::InvalidInput, "sample point has non-finite coordinates");
    }
    const AxisCoord ax = axis_coord(point.x, plane.width);
    const AxisCoord ay = axis_coord(point.y, plane.height);
    const double v00 = plane.at(ay.lo, ax.lo);
    const double v01 = plane.at(ay.lo, ax.hi);
    const double v10 = plane.at(ay.hi, ax.lo);
    const double v11 = plane.at(ay.hi, ax.hi);
    const double fx = ax.frac;
    const double fy = ay.frac;

    BilinearSample s;
    // weighted form stays exact at frac 0 and 1
    const double top = (1.0 - fx) * v00 + fx * v01;
    const double bottom = (1.0 - fx) * v10 + fx * v11;
    s.value = (1.0 - fy) * top + fy * bottom;
    s.cells = {ay.lo * plane.width + ax.lo, ay.lo * plane.width + ax.hi,
               ay.hi * plane.width + ax.lo, ay.hi * plane.width + ax.hi};
    s.weights = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
    if (!ax.clamped && plane.width > 1) s.d_dx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10);
    if (!ay.clamped && plane.height > 1) s.d_dy = (1.0 - fx) * (v10 - v00) + fx * (v11 - v01);
    return s;
}

double sample_bilinear(const PlaneView& plane, Point2 point) {
    return sample_bilinear_with_grad(plane, point).value;
}

void scatter_bilinear(const MutablePlaneView& plane, Point2 point, double upstream) {
    if (!std::isfinite(point.x) || !std::isfinite(point.y)) {
        throw Error(ErrorKind::InvalidInput, "sample point has non-finite coordinates");
    }
    const AxisCoord ax = axis_coord(point.x, plane.width);
    const AxisCoord ay = axis_coord(point.y, plane.height);
    const double fx = ax.frac;
    const double fy = ay.frac;
    plane.at(ay.lo, ax.lo) += upstream * (1.0 - fx) * (1.0 - fy);
    plane.at(ay.lo, ax.hi) += upstream * fx * (1.0 - fy);
    plane.at(ay.hi, ax.lo) += upstream * (1.0 - fx) * fy;
    plane.at(ay.hi, ax.hi) += upstream * fx * fy;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
        throw Error(ErrorKind::InvalidInput, "blur sigma must be finite and non-negative");
    }
    if (sigma == 0.0) return {1.0};
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const double w = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
        taps[static_cast<std::size_t>(k + radius)] = w;
        total += w;
    }
    for (double& w : taps) w /= total;
    return taps;
}

namespace {

// out[y][x] = sum_k taps[k] * in[clamp(y + dy*k)][clamp(x + dx*k)]
void convolve_axis(const PlaneView& in, const MutablePlaneView& out, std::span<const double> taps,
                   bool horizontal) {
    const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
    for (std::size_t y = 0; y < in.height; ++y) {
        for (std::size_t x = 0; x < in.width; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                const double w = taps[static_cast<std::size_t>(k + radius)];
                if (horizontal) {
                    acc += w * in.at(y, clamp_index(static_cast<std::ptrdiff_t>(x) + k, in.width));
                } else {
                    acc += w * in.at(clamp_index(static_cast<std::ptrdiff_t>(y) + k, in.height), x);
                }
            }
            out.at(y, x) = acc;
        }
    }
}

void convolve_axis_adjoint(const PlaneView& in, const MutablePlaneView& out,
                           std::span<const double> taps, bool horizontal) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
    for (std::size_t y = 0; y < in.height; ++y) {
        for (std::size_t x = 0; x < in.width; ++x) {
            const double g = in.at(y, x);
            for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                const double w = taps[static_cast<std::size_t>(k + radius)];
                if (horizontal) {
                    out.at(y, clamp_index(static_cast<std::ptrdiff_t>(x) + k, in.width)) += w * g;
                } else {
                    out.at(clamp_index(static_cast<std::ptrdiff_t>(y) + k, in.height), x) += w * g;
                }
            }
        }
    }
}

void check_planes(const PlaneView& in, const MutablePlaneView& out) {
    if (in.height != out.height || in.width != out.width) {
        throw Error(ErrorKind::InvalidInput, "blur input and output shapes differ");
    }
}

}  // namespace

void blur_plane(const PlaneView& in, const MutablePlaneView& out, double sigma) {
    check_planes(in, out);
    const auto taps = gaussian_kernel(sigma);
    if (taps.size() == 1) {
        std::copy(in.values.begin(), in.values.end(), out.values.begin());
        return;
    }
    std::vector<double> tmp(in.values.size());
    MutablePlaneView mid{in.height, in.width, tmp};
    convolve_axis(in, mid, taps, true);
    convolve_axis(PlaneView{in.height, in.width, tmp}, out, taps, false);
}

void blur_plane_adjoint(const PlaneView& in, const MutablePlaneView& out, double sigma) {
    check_planes(in, out);
    const auto taps = gaussian_kernel(sigma);
    if (taps.size() == 1) {
        std::copy(in.values.begin(), in.values.end(), out.values.begin());
        return;
    }
    std::vector<double> tmp(in.values.size());
    MutablePlaneView mid{in.height, in.width, tmp};
    convolve_axis_adjoint(in, mid, taps, false);
    convolve_axis_adjoint(PlaneView{in.height, in.width, tmp}, out, taps, true);
}

ScalarGrid2D gaussian_blur(const ScalarGrid2D& grid, double sigma) {
    ScalarGrid2D out(grid.height(), grid.width());
    blur_plane(grid.view(), out.mutable_view(), sigma);
    return out;
}

ScalarGrid2D normalize_max(const ScalarGrid2D& grid) {
    const double peak = grid.max();
    if (!(peak > 0.0)) {
        throw Error(ErrorKind::DegenerateMask, "cannot normalize a grid whose maximum is not positive");
    }
    ScalarGrid2D out = grid;
    for (double& v : out.values()) v = std::clamp(v / peak, 0.0, 1.0);
    return out;
}

}  // namespace dragkit
