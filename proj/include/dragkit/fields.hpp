#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace dragkit {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// Read-only view over one row-major plane (a ScalarGrid2D or one channel of a LatentField).
struct PlaneView {
    std::size_t height = 0;
    std::size_t width = 0;
    std::span<const double> values;

    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

struct MutablePlaneView {
    std::size_t height = 0;
    std::size_t width = 0;
    std::span<double> values;

    double& at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

class ScalarGrid2D {
public:
    ScalarGrid2D() = default;
    ScalarGrid2D(std::size_t height, std::size_t width, double fill = 0.0);
    ScalarGrid2D(std::size_t height, std::size_t width, std::vector<double> values);

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t size() const { return values_.size(); }

    double& at(std::size_t y, std::size_t x) { return values_[y * width_ + x]; }
    double at(std::size_t y, std::size_t x) const { return values_[y * width_ + x]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    PlaneView view() const { return {height_, width_, values_}; }
    MutablePlaneView mutable_view() { return {height_, width_, values_}; }

    double max() const;
    double sum() const;

    bool operator==(const ScalarGrid2D&) const = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> values_;
};

// C x H x W grid standing in for a diffusion latent z_t.
class LatentField {
public:
    LatentField() = default;
    LatentField(std::size_t channels, std::size_t height, std::size_t width, int timestep = 0,
                double fill = 0.0);
    LatentField(std::size_t channels, std::size_t height, std::size_t width, int timestep,
                std::vector<double> values);

    std::size_t channels() const { return channels_; }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t plane_size() const { return height_ * width_; }
    std::size_t size() const { return values_.size(); }

    int timestep() const { return timestep_; }
    void set_timestep(int t) { timestep_ = t; }

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return values_[(c * height_ + y) * width_ + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return values_[(c * height_ + y) * width_ + x];
    }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    PlaneView channel(std::size_t c) const;
    MutablePlaneView mutable_channel(std::size_t c);

    bool same_shape(const LatentField& other) const {
        return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
    }

    bool operator==(const LatentField&) const = default;

private:
    std::size_t channels_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    int timestep_ = 0;
    std::vector<double> values_;
};

// Multi-resolution features computed from one latent. Layer l has resolution
// ceil(H / 2^l) x ceil(W / 2^l); `scales[l]` is that 2^l factor.
struct FeatureField {
    std::vector<LatentField> layers;
    std::vector<std::size_t> scales;
    std::size_t source_channels = 0;
    std::size_t source_height = 0;
    std::size_t source_width = 0;
    int timestep = 0;

    // Feature vector length when all layers are sampled at one point.
    std::size_t vector_size() const;
};

struct BilinearSample {
    double value = 0.0;
    std::array<std::size_t, 4> cells{};  // flat indices into the plane
    std::array<double, 4> weights{};
    double d_dx = 0.0;  // zero when the x coordinate was clamped
    double d_dy = 0.0;
};

// Bilinear interpolation with out-of-range points clamped to the valid rectangle.
double sample_bilinear(const PlaneView& plane, Point2 point);
BilinearSample sample_bilinear_with_grad(const PlaneView& plane, Point2 point);
// Adjoint of sample_bilinear w.r.t. cell values: plane += upstream * d(sample)/d(cells).
void scatter_bilinear(const MutablePlaneView& plane, Point2 point, double upstream);

// Normalized 1-D Gaussian taps for offsets -r..r, r = ceil(3 sigma). sigma = 0 gives {1}.
std::vector<double> gaussian_kernel(double sigma);

// Separable Gaussian blur with edge replication. `in` and `out` must not alias.
void blur_plane(const PlaneView& in, const MutablePlaneView& out, double sigma);
// Transpose of blur_plane as a linear operator.
void blur_plane_adjoint(const PlaneView& in, const MutablePlaneView& out, double sigma);

ScalarGrid2D gaussian_blur(const ScalarGrid2D& grid, double sigma);
ScalarGrid2D normalize_max(const ScalarGrid2D& grid);

}  // namespace dragkit
