#pragma once

#include <span>
#include <vector>

#include "dragkit/fields.hpp"

namespace dragkit {

struct NoiseSchedule {
    int total_steps = 0;
    std::vector<double> alpha_bar;  // index 0..total_steps, alpha_bar[0] == 1

    // Squared-cosine cumulative schedule with per-step betas clipped at 0.999.
    static NoiseSchedule cosine(int total_steps, double offset = 0.008);

    double at(int t) const;
    void validate() const;
};

// Linear stand-in for a frozen denoiser. The clean-signal estimate is a Gaussian
// smoothing of z_t; features are a Gaussian pyramid of z_t.
struct ToyDenoiser {
    double smoothing_sigma = 0.5;
    std::vector<double> pyramid_sigmas{0.75, 1.0, 1.5};

    std::size_t pyramid_levels() const { return pyramid_sigmas.size(); }
    // Requirements for use inside the editing engine (>= 2 levels, increasing
    // positive sigmas, a smoothing operator that stays invertible by fixed point).
    void validate() const;
};

enum class DdimDirection { Forward, Backward };

// z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps
LatentField forward_noise(const LatentField& z0, int t, const LatentField& eps,
                          const NoiseSchedule& schedule);

// eps_hat = (z_t - sqrt(abar_t) S(z_t)) / sqrt(1 - abar_t); requires t >= 1.
LatentField predict_noise(const LatentField& zt, int t, const ToyDenoiser& denoiser,
                          const NoiseSchedule& schedule);

// Deterministic DDIM update. Backward maps t -> t-1 (denoise); Forward maps
// t -> t+1 (inversion) and is solved so that Backward(Forward(z)) == z.
LatentField ddim_step(const LatentField& zt, DdimDirection direction, const ToyDenoiser& denoiser,
                      const NoiseSchedule& schedule);

LatentField ddim_invert(const LatentField& z, int to_t, const ToyDenoiser& denoiser,
                        const NoiseSchedule& schedule);
LatentField ddim_denoise(const LatentField& z, int to_t, const ToyDenoiser& denoiser,
                         const NoiseSchedule& schedule);

FeatureField extract_features(const LatentField& zt, const ToyDenoiser& denoiser);

// Transpose of extract_features: maps a gradient over feature layers to a
// gradient over the latent.
LatentField features_adjoint(const FeatureField& grad, const ToyDenoiser& denoiser);

FeatureField zero_features_like(const FeatureField& like);

// All layers sampled at one latent-resolution point, concatenated layer-major.
std::vector<double> sample_features(const FeatureField& features, Point2 latent_point);
void scatter_features(FeatureField& grad, Point2 latent_point, std::span<const double> upstream);

}  // namespace dragkit
