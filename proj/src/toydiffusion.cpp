#include "dragkit/toydiffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dragkit/error.hpp"

namespace dragkit {

NoiseSchedule NoiseSchedule::cosine(int total_steps, double offset) {
    if (total_steps < 1) throw Error(ErrorKind::Configuration, "schedule needs at least one step");
    auto f = [&](int t) {
        const double phase = (static_cast<double>(t) / total_steps + offset) / (1.0 + offset);
        const double c = std::cos(phase * std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule s;
    s.total_steps = total_steps;
    s.alpha_bar.resize(static_cast<std::size_t>(total_steps) + 1);
    s.alpha_bar[0] = 1.0;
    const double f0 = f(0);
    for (int t = 1; t <= total_steps; ++t) {
        const double ratio = (f(t) / f0) / (f(t - 1) / f0);
        const double beta = std::min(1.0 - ratio, 0.999);
        s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - beta);
    }
    return s;
}

double NoiseSchedule::at(int t) const {
    if (t < 0 || t > total_steps) {
        throw Error(ErrorKind::InvalidStep, "timestep " + std::to_string(t) + " outside [0, " +
                                                std::to_string(total_steps) + "]");
    }
    return alpha_bar[static_cast<std::size_t>(t)];
}

void NoiseSchedule::validate() const {
    if (total_steps < 1 || alpha_bar.size() != static_cast<std::size_t>(total_steps) + 1) {
        throw Error(ErrorKind::Configuration, "schedule length does not match total_steps");
    }
    if (alpha_bar[0] != 1.0) throw Error(ErrorKind::Configuration, "alpha_bar[0] must be 1");
    for (std::size_t t = 1; t < alpha_bar.size(); ++t) {
        if (!(alpha_bar[t] > 0.0 && alpha_bar[t] < alpha_bar[t - 1])) {
            throw Error(ErrorKind::Configuration, "alpha_bar must be positive and strictly decreasing");
        }
    }
}

void ToyDenoiser::validate() const {
    if (!(smoothing_sigma >= 0.0)) throw Error(ErrorKind::Configuration, "smoothing_sigma must be >= 0");
    const double centre = gaussian_kernel(smoothing_sigma)[static_cast<std::size_t>(std::ceil(3.0 * smoothing_sigma))];
    if (!(centre * centre > 0.5)) {
        throw Error(ErrorKind::Configuration,
                    "smoothing_sigma too large: the smoothing operator must be diagonally dominant");
    }
    if (pyramid_sigmas.size() < 2) throw Error(ErrorKind::Configuration, "pyramid needs at least 2 levels");
    for (std::size_t i = 0; i < pyramid_sigmas.size(); ++i) {
        if (!(pyramid_sigmas[i] > 0.0)) throw Error(ErrorKind::Configuration, "pyramid sigmas must be positive");
        if (i > 0 && !(pyramid_sigmas[i] > pyramid_sigmas[i - 1])) {
            throw Error(ErrorKind::Configuration, "pyramid sigmas must be increasing");
        }
    }
}

namespace {

void require_same_shape(const LatentField& a, const LatentField& b, const char* what) {
    if (!a.same_shape(b)) throw Error(ErrorKind::InvalidInput, std::string(what) + ": shape mismatch");
}

LatentField smooth(const LatentField& z, double sigma) {
    LatentField out(z.channels(), z.height(), z.width(), z.timestep());
    for (std::size_t c = 0; c < z.channels(); ++c) blur_plane(z.channel(c), out.mutable_channel(c), sigma);
    return out;
}

// Coefficients of the backward step as a linear map z_{t-1} = a z_t + b S(z_t).
struct StepCoefficients {
    double identity = 0.0;
    double smoothing = 0.0;
};

StepCoefficients backward_coefficients(int t, const NoiseSchedule& schedule) {
    const double ab_t = schedule.at(t);
    const double ab_prev = schedule.at(t - 1);
    const double a = std::sqrt(1.0 - ab_prev) / std::sqrt(1.0 - ab_t);
    return {a, std::sqrt(ab_prev) - a * std::sqrt(ab_t)};
}

LatentField apply_backward_operator(const LatentField& z, StepCoefficients k, double sigma) {
    LatentField out = smooth(z, sigma);
    auto o = out.values();
    auto in = z.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = k.identity * in[i] + k.smoothing * o[i];
    return out;
}

// Diagonal of the 1-D edge-replicated blur along an axis of length n.
std::vector<double> blur_diagonal(std::span<const double> taps, std::size_t n) {
    const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
    std::vector<double> d(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
            const std::ptrdiff_t j = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) + k, 0,
                                                                static_cast<std::ptrdiff_t>(n) - 1);
            if (static_cast<std::size_t>(j) == i) d[i] += taps[static_cast<std::size_t>(k + radius)];
        }
    }
    return d;
}

// Solves (a I + b S) z = rhs by Jacobi iteration; S is diagonally dominant.
LatentField solve_backward_operator(const LatentField& rhs, StepCoefficients k, double sigma) {
    const auto taps = gaussian_kernel(sigma);
    const auto dx = blur_diagonal(taps, rhs.width());
    const auto dy = blur_diagonal(taps, rhs.height());

    double scale = 1.0;
    for (double v : rhs.values()) scale = std::max(scale, std::abs(v));
    const double tolerance = 1e-14 * scale;

    LatentField z = rhs;
    for (double& v : z.values()) v /= (k.identity + k.smoothing);
    constexpr int kMaxIterations = 2000;
    for (int iter = 0; iter < kMaxIterations; ++iter) {
        const LatentField applied = apply_backward_operator(z, k, sigma);
        double residual = 0.0;
        for (std::size_t c = 0; c < z.channels(); ++c) {
            for (std::size_t y = 0; y < z.height(); ++y) {
                for (std::size_t x = 0; x < z.width(); ++x) {
                    const double r = rhs.at(c, y, x) - applied.at(c, y, x);
                    residual = std::max(residual, std::abs(r));
                    z.at(c, y, x) += r / (k.identity + k.smoothing * dx[x] * dy[y]);
                }
            }
        }
        if (residual <= tolerance) return z;
    }
    throw Error(ErrorKind::InvalidStep, "DDIM inversion fixed point did not converge");
}

}  // namespace

LatentField forward_noise(const LatentField& z0, int t, const LatentField& eps,
                          const NoiseSchedule& schedule) {
    require_same_shape(z0, eps, "forward_noise");
    const double ab = schedule.at(t);
    const double sa = std::sqrt(ab);
    const double sn = std::sqrt(1.0 - ab);
    LatentField out(z0.channels(), z0.height(), z0.width(), t);
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = sa * z0.values()[i] + sn * eps.values()[i];
    return out;
}

LatentField predict_noise(const LatentField& zt, int t, const ToyDenoiser& denoiser,
                          const NoiseSchedule& schedule) {
    if (t == 0) throw Error(ErrorKind::InvalidStep, "no noise to predict at timestep 0");
    const double ab = schedule.at(t);
    const double sa = std::sqrt(ab);
    const double sn = std::sqrt(1.0 - ab);
    LatentField out = smooth(zt, denoiser.smoothing_sigma);
    out.set_timestep(t);
    auto o = out.values();
    auto z = zt.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = (z[i] - sa * o[i]) / sn;
    return out;
}

LatentField ddim_step(const LatentField& zt, DdimDirection direction, const ToyDenoiser& denoiser,
                      const NoiseSchedule& schedule) {
    const int t = zt.timestep();
    if (direction == DdimDirection::Backward) {
        if (t < 1 || t > schedule.total_steps) {
            throw Error(ErrorKind::InvalidStep, "cannot denoise from timestep " + std::to_string(t));
        }
        const LatentField eps = predict_noise(zt, t, denoiser, schedule);
        const double ab_t = schedule.at(t);
        const double ab_prev = schedule.at(t - 1);
        LatentField out(zt.channels(), zt.height(), zt.width(), t - 1);
        auto o = out.values();
        auto z = zt.values();
        auto e = eps.values();
        for (std::size_t i = 0; i < o.size(); ++i) {
            const double clean = (z[i] - std::sqrt(1.0 - ab_t) * e[i]) / std::sqrt(ab_t);
            o[i] = std::sqrt(ab_prev) * clean + std::sqrt(1.0 - ab_prev) * e[i];
        }
        return out;
    }
    if (t < 0 || t >= schedule.total_steps) {
        throw Error(ErrorKind::InvalidStep, "cannot invert from timestep " + std::to_string(t));
    }
    LatentField out = solve_backward_operator(zt, backward_coefficients(t + 1, schedule),
                                              denoiser.smoothing_sigma);
    out.set_timestep(t + 1);
    return out;
}

LatentField ddim_invert(const LatentField& z, int to_t, const ToyDenoiser& denoiser,
                        const NoiseSchedule& schedule) {
    if (to_t < z.timestep() || to_t > schedule.total_steps) {
        throw Error(ErrorKind::InvalidStep, "inversion target timestep out of range");
    }
    LatentField cur = z;
    while (cur.timestep() < to_t) cur = ddim_step(cur, DdimDirection::Forward, denoiser, schedule);
    return cur;
}

LatentField ddim_denoise(const LatentField& z, int to_t, const ToyDenoiser& denoiser,
                         const NoiseSchedule& schedule) {
    if (to_t < 0 || to_t > z.timestep()) {
        throw Error(ErrorKind::InvalidStep, "denoise target timestep out of range");
    }
    LatentField cur = z;
    while (cur.timestep() > to_t) cur = ddim_step(cur, DdimDirection::Backward, denoiser, schedule);
    return cur;
}

FeatureField extract_features(const LatentField& zt, const ToyDenoiser& denoiser) {
    if (zt.timestep() < 0) throw Error(ErrorKind::InvalidStep, "negative timestep");
    if (denoiser.pyramid_sigmas.empty()) throw Error(ErrorKind::Configuration, "empty feature pyramid");
    FeatureField f;
    f.source_channels = zt.channels();
    f.source_height = zt.height();
    f.source_width = zt.width();
    f.timestep = zt.timestep();
    for (std::size_t level = 0; level < denoiser.pyramid_levels(); ++level) {
        const std::size_t scale = std::size_t{1} << level;
        const LatentField blurred = smooth(zt, denoiser.pyramid_sigmas[level]);
        const std::size_t h = (zt.height() + scale - 1) / scale;
        const std::size_t w = (zt.width() + scale - 1) / scale;
        LatentField layer(zt.channels(), h, w, zt.timestep());
        for (std::size_t c = 0; c < zt.channels(); ++c) {
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) layer.at(c, y, x) = blurred.at(c, y * scale, x * scale);
            }
        }
        f.layers.push_back(std::move(layer));
        f.scales.push_back(scale);
    }
    return f;
}

LatentField features_adjoint(const FeatureField& grad, const ToyDenoiser& denoiser) {
    if (grad.layers.size() != denoiser.pyramid_levels()) {
        throw Error(ErrorKind::Configuration, "feature gradient has the wrong number of layers");
    }
    LatentField out(grad.source_channels, grad.source_height, grad.source_width, grad.timestep);
    LatentField upsampled(grad.source_channels, grad.source_height, grad.source_width, grad.timestep);
    std::vector<double> plane(grad.source_height * grad.source_width);
    for (std::size_t level = 0; level < grad.layers.size(); ++level) {
        const LatentField& layer = grad.layers[level];
        const std::size_t scale = grad.scales[level];
        std::fill(upsampled.values().begin(), upsampled.values().end(), 0.0);
        for (std::size_t c = 0; c < layer.channels(); ++c) {
            for (std::size_t y = 0; y < layer.height(); ++y) {
                for (std::size_t x = 0; x < layer.width(); ++x) {
                    upsampled.at(c, y * scale, x * scale) = layer.at(c, y, x);
                }
            }
        }
        for (std::size_t c = 0; c < out.channels(); ++c) {
            MutablePlaneView tmp{out.height(), out.width(), plane};
            blur_plane_adjoint(upsampled.channel(c), tmp, denoiser.pyramid_sigmas[level]);
            auto dst = out.mutable_channel(c);
            for (std::size_t i = 0; i < plane.size(); ++i) dst.values[i] += plane[i];
        }
    }
    return out;
}

FeatureField zero_features_like(const FeatureField& like) {
    FeatureField out = like;
    for (auto& layer : out.layers) std::fill(layer.values().begin(), layer.values().end(), 0.0);
    return out;
}

std::vector<double> sample_features(const FeatureField& features, Point2 latent_point) {
    std::vector<double> out;
    out.reserve(features.vector_size());
    for (std::size_t level = 0; level < features.layers.size(); ++level) {
        const double s = static_cast<double>(features.scales[level]);
        const Point2 p{latent_point.x / s, latent_point.y / s};
        const LatentField& layer = features.layers[level];
        for (std::size_t c = 0; c < layer.channels(); ++c) out.push_back(sample_bilinear(layer.channel(c), p));
    }
    return out;
}

void scatter_features(FeatureField& grad, Point2 latent_point, std::span<const double> upstream) {
    if (upstream.size() != grad.vector_size()) {
        throw Error(ErrorKind::InvalidInput, "upstream gradient has the wrong feature length");
    }
    std::size_t k = 0;
    for (std::size_t level = 0; level < grad.layers.size(); ++level) {
        const double s = static_cast<double>(grad.scales[level]);
        const Point2 p{latent_point.x / s, latent_point.y / s};
        LatentField& layer = grad.layers[level];
        for (std::size_t c = 0; c < layer.channels(); ++c) {
            const double g = upstream[k++];
            if (g != 0.0) scatter_bilinear(layer.mutable_channel(c), p, g);
        }
    }
}

}  // namespace dragkit
