#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dragkit/fields.hpp"
#include "dragkit/toydiffusion.hpp"

namespace dragkit {

// Aggregation head over multi-layer features: per-layer linear bottleneck to a
// common width, a projected timestep embedding added after the bottleneck,
// bilinear upsampling to layer-0 resolution, and a learned weighted sum.
struct ReadoutHead {
    std::size_t input_channels = 0;
    std::size_t width = 0;     // common embedding width
    std::size_t time_dim = 0;  // sinusoidal timestep embedding size
    std::vector<std::vector<double>> bottleneck;       // per layer, width x input_channels
    std::vector<std::vector<double>> time_projection;  // per layer, width x time_dim
    std::vector<double> aggregation;                   // per layer
    double margin = 0.2;

    std::size_t layers() const { return aggregation.size(); }
    void validate() const;

    // Bottleneck = identity, zero timestep projection, unit aggregation weights.
    static ReadoutHead identity(std::size_t layers, std::size_t channels);
    static ReadoutHead random(std::size_t layers, std::size_t channels, std::size_t width,
                              std::size_t time_dim, std::uint64_t seed, double scale = 0.5);

    // Flat view of every trainable value: per layer bottleneck, time projection,
    // then the aggregation weights.
    std::size_t parameter_count() const;
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> values);
};

std::vector<double> timestep_embedding(int t, std::size_t dim);

// Embedding grid with `width` channels at the feature field's source resolution.
LatentField readout_forward(const FeatureField& features, const ReadoutHead& head);

struct ReadoutGradient {
    FeatureField features;            // d loss / d features
    std::vector<double> parameters;   // d loss / d head parameters, flat layout
};

ReadoutGradient readout_backward(const FeatureField& features, const ReadoutHead& head,
                                 const LatentField& embedding_grad, bool want_features = true,
                                 bool want_parameters = true);

// Cosine distance 1 - <u, v> / (|u| |v|) over flattened embeddings.
double cosine_distance(std::span<const double> u, std::span<const double> v);

struct TripletBatch {
    FeatureField anchor;
    FeatureField positive;
    FeatureField negative;
};

struct TripletValue {
    double loss = 0.0;
    double positive_distance = 0.0;
    double negative_distance = 0.0;
    std::vector<double> parameter_grad;  // empty unless requested
};

// max(0, D(F(a), F(p)) - D(F(a), F(n)) + delta)
TripletValue triplet_loss(const TripletBatch& batch, const ReadoutHead& head, double delta,
                          bool with_gradient = false);

struct MeanTripletValue {
    double loss = 0.0;
    std::vector<double> parameter_grad;
};

MeanTripletValue mean_triplet_loss(std::span<const TripletBatch> dataset, const ReadoutHead& head,
                                   bool with_gradient = false);

struct TrainOptions {
    int steps = 2000;
    double learning_rate = 1e-2;
};

struct TrainResult {
    ReadoutHead head;
    std::vector<double> loss_history;  // mean loss before each step, then the final value
};

// Full-batch gradient descent on the mean triplet loss. Returns the best head seen.
TrainResult train_readout(std::span<const TripletBatch> dataset, const ReadoutHead& initial,
                          const TrainOptions& options);

// Synthetic appearance triplets: anchor = smooth random latent, positive = a
// one-cell translation of it, negative = a per-channel affine recolouring.
std::vector<TripletBatch> make_synthetic_triplets(std::size_t count, std::size_t channels,
                                                  std::size_t height, std::size_t width, int timestep,
                                                  const ToyDenoiser& denoiser, std::uint64_t seed);

struct GuidanceValue {
    double loss = 0.0;
    LatentField gradient;  // d loss / d current latent
};

// Squared embedding distance per grid cell, averaged over cells, with its exact gradient.
GuidanceValue rg_loss(const LatentField& current, const LatentField& reference_embedding,
                      const ReadoutHead& head, const ToyDenoiser& denoiser);

// Head used when no trained head file is supplied: a small random head briefly
// trained on synthetic triplets, fully determined by `seed`.
ReadoutHead bootstrap_readout_head(std::size_t channels, const ToyDenoiser& denoiser, int timestep,
                                   std::uint64_t seed);

LatentField embed_latent(const LatentField& latent, const ReadoutHead& head, const ToyDenoiser& denoiser);

std::string serialize_head(const ReadoutHead& head);
ReadoutHead deserialize_head(const std::string& text);
void save_head(const ReadoutHead& head, const std::filesystem::path& path);
ReadoutHead load_head(const std::filesystem::path& path);

}  // namespace dragkit
