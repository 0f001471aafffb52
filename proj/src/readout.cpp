#include "dragkit/readout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dragkit/error.hpp"

namespace dragkit {

namespace {

constexpr const char* kHeadFormat = "dragkit-readout-head";
constexpr int kHeadVersion = 1;

void require_layers(const FeatureField& features, const ReadoutHead& head) {
    if (features.layers.size() != head.layers()) {
        throw Error(ErrorKind::Configuration, "readout head expects " + std::to_string(head.layers()) +
                                                  " feature layers, got " +
                                                  std::to_string(features.layers.size()));
    }
    for (const auto& layer : features.layers) {
        if (layer.channels() != head.input_channels) {
            throw Error(ErrorKind::Configuration, "feature channel count does not match readout head");
        }
    }
}

// Bottlenecked layer plus timestep embedding, at the layer's own resolution.
LatentField bottleneck_layer(const LatentField& layer, std::size_t level, const ReadoutHead& head,
                             std::span<const double> time_emb) {
    const auto& B = head.bottleneck[level];
    const auto& P = head.time_projection[level];
    LatentField out(head.width, layer.height(), layer.width(), layer.timestep());
    for (std::size_t k = 0; k < head.width; ++k) {
        double bias = 0.0;
        for (std::size_t j = 0; j < head.time_dim; ++j) bias += P[k * head.time_dim + j] * time_emb[j];
        auto dst = out.mutable_channel(k);
        std::fill(dst.values.begin(), dst.values.end(), bias);
        for (std::size_t c = 0; c < head.input_channels; ++c) {
            const double w = B[k * head.input_channels + c];
            if (w == 0.0) continue;
            auto src = layer.channel(c);
            for (std::size_t i = 0; i < dst.values.size(); ++i) dst.values[i] += w * src.values[i];
        }
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

constexpr double kNormEpsilon = 1e-12;

// d/du of cosine distance D(u, v).
std::vector<double> cosine_distance_grad(std::span<const double> u, std::span<const double> v) {
    const double nu = std::max(norm(u), kNormEpsilon);
    const double nv = std::max(norm(v), kNormEpsilon);
    const double uv = dot(u, v);
    std::vector<double> g(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        g[i] = -v[i] / (nu * nv) + uv * u[i] / (nu * nu * nu * nv);
    }
    return g;
}

// Per-cell stacked features [U f_0; ...; U f_{L-1}; 1] at source resolution,
// where U is bilinear upsampling. The embedding is M times this vector.
std::vector<double> stack_features(const FeatureField& features, std::size_t& dim) {
    const std::size_t cells = features.source_height * features.source_width;
    dim = features.vector_size() + 1;
    std::vector<double> out(cells * dim, 0.0);
    for (std::size_t y = 0; y < features.source_height; ++y) {
        for (std::size_t x = 0; x < features.source_width; ++x) {
            const auto v = sample_features(features, {double(x), double(y)});
            double* row = &out[(y * features.source_width + x) * dim];
            std::copy(v.begin(), v.end(), row);
            row[dim - 1] = 1.0;
        }
    }
    return out;
}

// G[i][j] = sum over cells of u_i * v_j
std::vector<double> gram(const std::vector<double>& u, const std::vector<double>& v, std::size_t dim) {
    std::vector<double> g(dim * dim, 0.0);
    const std::size_t cells = u.size() / dim;
    for (std::size_t n = 0; n < cells; ++n) {
        const double* a = &u[n * dim];
        const double* b = &v[n * dim];
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = 0; j < dim; ++j) g[i * dim + j] += a[i] * b[j];
        }
    }
    return g;
}

struct TripletGram {
    std::size_t dim = 0;
    int timestep = 0;
    std::vector<double> aa, pp, nn, ap, an;
};

TripletGram make_gram(const TripletBatch& batch) {
    TripletGram g;
    const auto a = stack_features(batch.anchor, g.dim);
    const auto p = stack_features(batch.positive, g.dim);
    const auto n = stack_features(batch.negative, g.dim);
    if (a.size() != p.size() || a.size() != n.size()) {
        throw Error(ErrorKind::InvalidInput, "triplet members have inconsistent shapes");
    }
    g.timestep = batch.anchor.timestep;
    g.aa = gram(a, a, g.dim);
    g.pp = gram(p, p, g.dim);
    g.nn = gram(n, n, g.dim);
    g.ap = gram(a, p, g.dim);
    g.an = gram(a, n, g.dim);
    return g;
}

// Effective per-cell linear map (width x dim) of the head at one timestep.
std::vector<double> effective_map(const ReadoutHead& head, int timestep) {
    const std::size_t dim = head.layers() * head.input_channels + 1;
    const auto phi = timestep_embedding(timestep, head.time_dim);
    std::vector<double> M(head.width * dim, 0.0);
    for (std::size_t l = 0; l < head.layers(); ++l) {
        const double a = head.aggregation[l];
        for (std::size_t k = 0; k < head.width; ++k) {
            for (std::size_t c = 0; c < head.input_channels; ++c) {
                M[k * dim + l * head.input_channels + c] = a * head.bottleneck[l][k * head.input_channels + c];
            }
            double bias = 0.0;
            for (std::size_t j = 0; j < head.time_dim; ++j) bias += head.time_projection[l][k * head.time_dim + j] * phi[j];
            M[k * dim + dim - 1] += a * bias;
        }
    }
    return M;
}

double quadratic(const std::vector<double>& M, const std::vector<double>& G, std::size_t width, std::size_t dim) {
    double s = 0.0;
    for (std::size_t k = 0; k < width; ++k) {
        const double* m = &M[k * dim];
        for (std::size_t i = 0; i < dim; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < dim; ++j) row += G[i * dim + j] * m[j];
            s += m[i] * row;
        }
    }
    return s;
}

// dM += coeff * M (G + G^T)
void add_quadratic_grad(std::vector<double>& dM, const std::vector<double>& M, const std::vector<double>& G,
                        double coeff, std::size_t width, std::size_t dim) {
    if (coeff == 0.0) return;
    for (std::size_t k = 0; k < width; ++k) {
        const double* m = &M[k * dim];
        for (std::size_t i = 0; i < dim; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < dim; ++j) acc += m[j] * (G[i * dim + j] + G[j * dim + i]);
            dM[k * dim + i] += coeff * acc;
        }
    }
}

// Chain rule from the effective map back to the head's flat parameters.
void map_grad_to_parameters(const ReadoutHead& head, int timestep, const std::vector<double>& dM,
                            std::vector<double>& grad) {
    const std::size_t dim = head.layers() * head.input_channels + 1;
    const auto phi = timestep_embedding(timestep, head.time_dim);
    const std::size_t agg_offset = head.parameter_count() - head.layers();
    std::size_t offset = 0;
    for (std::size_t l = 0; l < head.layers(); ++l) {
        const double a = head.aggregation[l];
        double da = 0.0;
        for (std::size_t k = 0; k < head.width; ++k) {
            for (std::size_t c = 0; c < head.input_channels; ++c) {
                const double g = dM[k * dim + l * head.input_channels + c];
                grad[offset + k * head.input_channels + c] += a * g;
                da += g * head.bottleneck[l][k * head.input_channels + c];
            }
            const double gb = dM[k * dim + dim - 1];
            double bias = 0.0;
            for (std::size_t j = 0; j < head.time_dim; ++j) {
                grad[offset + head.width * head.input_channels + k * head.time_dim + j] += a * gb * phi[j];
                bias += head.time_projection[l][k * head.time_dim + j] * phi[j];
            }
            da += gb * bias;
        }
        grad[agg_offset + l] += da;
        offset += head.width * head.input_channels + head.width * head.time_dim;
    }
}

// Mean triplet loss and gradient evaluated from precomputed Gram matrices.
MeanTripletValue mean_triplet_loss_gram(std::span<const TripletGram> grams, const ReadoutHead& head,
                                        bool with_gradient) {
    MeanTripletValue out;
    if (with_gradient) out.parameter_grad.assign(head.parameter_count(), 0.0);
    const double inv = 1.0 / static_cast<double>(grams.size());
    const std::size_t w = head.width;
    for (const auto& g : grams) {
        const std::size_t dim = g.dim;
        const auto M = effective_map(head, g.timestep);
        const double saa = quadratic(M, g.aa, w, dim);
        const double spp = quadratic(M, g.pp, w, dim);
        const double snn = quadratic(M, g.nn, w, dim);
        const double sap = quadratic(M, g.ap, w, dim);
        const double san = quadratic(M, g.an, w, dim);
        const double eps2 = kNormEpsilon * kNormEpsilon;
        if (saa < eps2 || spp < eps2 || snn < eps2) {
            throw Error(ErrorKind::CosineUndefined, "cosine distance of a zero-norm embedding");
        }
        const double na = std::sqrt(saa), np = std::sqrt(spp), nn = std::sqrt(snn);
        const double dp = 1.0 - sap / (na * np);
        const double dn = 1.0 - san / (na * nn);
        const double raw = dp - dn + head.margin;
        if (raw <= 0.0) continue;
        out.loss += inv * raw;
        if (!with_gradient) continue;
        // partial derivatives of dp - dn w.r.t. the five inner products
        const double c_ap = -1.0 / (na * np);
        const double c_an = 1.0 / (na * nn);
        const double c_pp = sap / (2.0 * na * np * spp);
        const double c_nn = -san / (2.0 * na * nn * snn);
        const double c_aa = sap / (2.0 * np * na * saa) - san / (2.0 * nn * na * saa);
        std::vector<double> dM(M.size(), 0.0);
        add_quadratic_grad(dM, M, g.ap, inv * c_ap, w, dim);
        add_quadratic_grad(dM, M, g.an, inv * c_an, w, dim);
        add_quadratic_grad(dM, M, g.pp, inv * c_pp, w, dim);
        add_quadratic_grad(dM, M, g.nn, inv * c_nn, w, dim);
        add_quadratic_grad(dM, M, g.aa, inv * c_aa, w, dim);
        map_grad_to_parameters(head, g.timestep, dM, out.parameter_grad);
    }
    return out;
}

}  // namespace

void ReadoutHead::validate() const {
    if (width == 0) throw Error(ErrorKind::Configuration, "readout width must be at least 1");
    if (input_channels == 0) throw Error(ErrorKind::Configuration, "readout input channels must be at least 1");
    if (!(margin > 0.0)) throw Error(ErrorKind::Configuration, "triplet margin must be positive");
    if (aggregation.empty()) throw Error(ErrorKind::Configuration, "readout head has no layers");
    if (bottleneck.size() != layers() || time_projection.size() != layers()) {
        throw Error(ErrorKind::Configuration, "readout head layer tables disagree");
    }
    for (std::size_t l = 0; l < layers(); ++l) {
        if (bottleneck[l].size() != width * input_channels || time_projection[l].size() != width * time_dim) {
            throw Error(ErrorKind::Configuration, "readout head matrix has the wrong size");
        }
    }
    for (double v : parameters()) {
        if (!std::isfinite(v)) throw Error(ErrorKind::Configuration, "readout head has non-finite parameters");
    }
}

ReadoutHead ReadoutHead::identity(std::size_t layers, std::size_t channels) {
    ReadoutHead h;
    h.input_channels = channels;
    h.width = channels;
    h.time_dim = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        std::vector<double> B(channels * channels, 0.0);
        for (std::size_t c = 0; c < channels; ++c) B[c * channels + c] = 1.0;
        h.bottleneck.push_back(std::move(B));
        h.time_projection.emplace_back();
        h.aggregation.push_back(1.0);
    }
    return h;
}

ReadoutHead ReadoutHead::random(std::size_t layers, std::size_t channels, std::size_t width,
                                std::size_t time_dim, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ReadoutHead h;
    h.input_channels = channels;
    h.width = width;
    h.time_dim = time_dim;
    const double bscale = scale / std::sqrt(static_cast<double>(channels));
    for (std::size_t l = 0; l < layers; ++l) {
        std::vector<double> B(width * channels);
        for (double& v : B) v = bscale * normal(rng);
        std::vector<double> P(width * time_dim);
        for (double& v : P) v = 0.1 * scale * normal(rng);
        h.bottleneck.push_back(std::move(B));
        h.time_projection.push_back(std::move(P));
        h.aggregation.push_back(1.0 / static_cast<double>(layers));
    }
    return h;
}

std::size_t ReadoutHead::parameter_count() const {
    return layers() * (width * input_channels + width * time_dim) + layers();
}

std::vector<double> ReadoutHead::parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    for (std::size_t l = 0; l < layers(); ++l) {
        p.insert(p.end(), bottleneck[l].begin(), bottleneck[l].end());
        p.insert(p.end(), time_projection[l].begin(), time_projection[l].end());
    }
    p.insert(p.end(), aggregation.begin(), aggregation.end());
    return p;
}

void ReadoutHead::set_parameters(std::span<const double> values) {
    if (values.size() != parameter_count()) {
        throw Error(ErrorKind::InvalidInput, "parameter vector has the wrong length");
    }
    std::size_t k = 0;
    for (std::size_t l = 0; l < layers(); ++l) {
        for (double& v : bottleneck[l]) v = values[k++];
        for (double& v : time_projection[l]) v = values[k++];
    }
    for (double& v : aggregation) v = values[k++];
}

std::vector<double> timestep_embedding(int t, std::size_t dim) {
    std::vector<double> e(dim, 0.0);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(half, 1)));
        e[i] = std::sin(t * freq);
        e[i + half] = std::cos(t * freq);
    }
    return e;
}

LatentField readout_forward(const FeatureField& features, const ReadoutHead& head) {
    require_layers(features, head);
    const auto time_emb = timestep_embedding(features.timestep, head.time_dim);
    LatentField out(head.width, features.source_height, features.source_width, features.timestep);
    for (std::size_t level = 0; level < head.layers(); ++level) {
        const double a = head.aggregation[level];
        if (a == 0.0) continue;
        const LatentField b = bottleneck_layer(features.layers[level], level, head, time_emb);
        const double s = static_cast<double>(features.scales[level]);
        for (std::size_t k = 0; k < head.width; ++k) {
            const PlaneView plane = b.channel(k);
            for (std::size_t y = 0; y < out.height(); ++y) {
                for (std::size_t x = 0; x < out.width(); ++x) {
                    out.at(k, y, x) += a * sample_bilinear(plane, {double(x) / s, double(y) / s});
                }
            }
        }
    }
    return out;
}

ReadoutGradient readout_backward(const FeatureField& features, const ReadoutHead& head,
                                 const LatentField& embedding_grad, bool want_features,
                                 bool want_parameters) {
    require_layers(features, head);
    if (embedding_grad.channels() != head.width || embedding_grad.height() != features.source_height ||
        embedding_grad.width() != features.source_width) {
        throw Error(ErrorKind::InvalidInput, "embedding gradient has the wrong shape");
    }
    const auto time_emb = timestep_embedding(features.timestep, head.time_dim);
    ReadoutGradient out;
    if (want_features) out.features = zero_features_like(features);
    if (want_parameters) out.parameters.assign(head.parameter_count(), 0.0);

    std::size_t offset = 0;
    const std::size_t agg_offset = head.parameter_count() - head.layers();
    for (std::size_t level = 0; level < head.layers(); ++level) {
        const LatentField& layer = features.layers[level];
        const double s = static_cast<double>(features.scales[level]);
        const double a = head.aggregation[level];

        // Gradient w.r.t. the bottlenecked layer: a * U^T G.
        LatentField g_b(head.width, layer.height(), layer.width(), layer.timestep());
        for (std::size_t k = 0; k < head.width; ++k) {
            const PlaneView g = embedding_grad.channel(k);
            const MutablePlaneView dst = g_b.mutable_channel(k);
            for (std::size_t y = 0; y < g.height; ++y) {
                for (std::size_t x = 0; x < g.width; ++x) {
                    const double v = g.at(y, x);
                    if (v != 0.0) scatter_bilinear(dst, {double(x) / s, double(y) / s}, v);
                }
            }
        }

        if (want_parameters) {
            // d/da = <G, U b> = <U^T G, b>
            const LatentField b = bottleneck_layer(layer, level, head, time_emb);
            out.parameters[agg_offset + level] = dot(g_b.values(), b.values());
            for (std::size_t k = 0; k < head.width; ++k) {
                const auto gk = g_b.channel(k).values;
                for (std::size_t c = 0; c < head.input_channels; ++c) {
                    out.parameters[offset + k * head.input_channels + c] = a * dot(gk, layer.channel(c).values);
                }
                double total = 0.0;
                for (double v : gk) total += v;
                for (std::size_t j = 0; j < head.time_dim; ++j) {
                    out.parameters[offset + head.width * head.input_channels + k * head.time_dim + j] =
                        a * total * time_emb[j];
                }
            }
        }
        offset += head.width * head.input_channels + head.width * head.time_dim;

        if (want_features && a != 0.0) {
            LatentField& df = out.features.layers[level];
            const auto& B = head.bottleneck[level];
            for (std::size_t c = 0; c < head.input_channels; ++c) {
                auto dst = df.mutable_channel(c);
                for (std::size_t k = 0; k < head.width; ++k) {
                    const double w = a * B[k * head.input_channels + c];
                    if (w == 0.0) continue;
                    const auto gk = g_b.channel(k).values;
                    for (std::size_t i = 0; i < gk.size(); ++i) dst.values[i] += w * gk[i];
                }
            }
        }
    }
    return out;
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw Error(ErrorKind::InvalidInput, "cosine distance of unequal lengths");
    const double nu = norm(u);
    const double nv = norm(v);
    if (nu < kNormEpsilon || nv < kNormEpsilon) {
        throw Error(ErrorKind::CosineUndefined, "cosine distance of a zero-norm embedding");
    }
    return 1.0 - dot(u, v) / (nu * nv);
}

TripletValue triplet_loss(const TripletBatch& batch, const ReadoutHead& head, double delta,
                          bool with_gradient) {
    if (!(delta > 0.0)) throw Error(ErrorKind::InvalidInput, "triplet margin must be positive");
    const LatentField ea = readout_forward(batch.anchor, head);
    const LatentField ep = readout_forward(batch.positive, head);
    const LatentField en = readout_forward(batch.negative, head);
    if (!ea.same_shape(ep) || !ea.same_shape(en)) {
        throw Error(ErrorKind::InvalidInput, "triplet members have inconsistent shapes");
    }
    TripletValue v;
    v.positive_distance = cosine_distance(ea.values(), ep.values());
    v.negative_distance = cosine_distance(ea.values(), en.values());
    const double raw = v.positive_distance - v.negative_distance + delta;
    v.loss = std::max(0.0, raw);
    if (!with_gradient) return v;

    v.parameter_grad.assign(head.parameter_count(), 0.0);
    if (raw <= 0.0) return v;

    // L = D(a, p) - D(a, n) + delta
    const auto dpa = cosine_distance_grad(ea.values(), ep.values());
    const auto dpp = cosine_distance_grad(ep.values(), ea.values());
    const auto dna = cosine_distance_grad(ea.values(), en.values());
    const auto dnn = cosine_distance_grad(en.values(), ea.values());
    LatentField ga(ea.channels(), ea.height(), ea.width(), ea.timestep());
    LatentField gp = ga;
    LatentField gn = ga;
    for (std::size_t i = 0; i < ga.size(); ++i) {
        ga.values()[i] = dpa[i] - dna[i];
        gp.values()[i] = dpp[i];
        gn.values()[i] = -dnn[i];
    }
    auto accumulate = [&](const FeatureField& f, const LatentField& g) {
        const auto r = readout_backward(f, head, g, false, true);
        for (std::size_t i = 0; i < r.parameters.size(); ++i) v.parameter_grad[i] += r.parameters[i];
    };
    accumulate(batch.anchor, ga);
    accumulate(batch.positive, gp);
    accumulate(batch.negative, gn);
    return v;
}

MeanTripletValue mean_triplet_loss(std::span<const TripletBatch> dataset, const ReadoutHead& head,
                                   bool with_gradient) {
    if (dataset.empty()) throw Error(ErrorKind::InvalidInput, "triplet dataset is empty");
    MeanTripletValue out;
    if (with_gradient) out.parameter_grad.assign(head.parameter_count(), 0.0);
    const double inv = 1.0 / static_cast<double>(dataset.size());
    for (const auto& batch : dataset) {
        const TripletValue v = triplet_loss(batch, head, head.margin, with_gradient);
        out.loss += inv * v.loss;
        for (std::size_t i = 0; i < out.parameter_grad.size(); ++i) out.parameter_grad[i] += inv * v.parameter_grad[i];
    }
    return out;
}

TrainResult train_readout(std::span<const TripletBatch> dataset, const ReadoutHead& initial,
                          const TrainOptions& options) {
    if (dataset.empty()) throw Error(ErrorKind::InvalidInput, "triplet dataset is empty");
    if (!(options.learning_rate > 0.0)) throw Error(ErrorKind::Configuration, "learning rate must be positive");
    initial.validate();
    for (const auto& batch : dataset) {
        require_layers(batch.anchor, initial);
        require_layers(batch.positive, initial);
        require_layers(batch.negative, initial);
    }
    std::vector<TripletGram> grams;
    grams.reserve(dataset.size());
    for (const auto& batch : dataset) grams.push_back(make_gram(batch));

    TrainResult result{initial, {}};
    ReadoutHead head = initial;
    double best = std::numeric_limits<double>::infinity();
    for (int step = 0; step <= options.steps; ++step) {
        const MeanTripletValue v = mean_triplet_loss_gram(grams, head, step < options.steps);
        if (!std::isfinite(v.loss)) throw Error(ErrorKind::TrainingDiverged, "mean triplet loss is not finite");
        result.loss_history.push_back(v.loss);
        if (v.loss < best) {
            best = v.loss;
            result.head = head;
        }
        if (v.loss == 0.0 || step == options.steps) break;
        std::vector<double> p = head.parameters();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= options.learning_rate * v.parameter_grad[i];
        for (double x : p) {
            if (!std::isfinite(x)) throw Error(ErrorKind::TrainingDiverged, "head parameters became non-finite");
        }
        head.set_parameters(p);
    }
    return result;
}

std::vector<TripletBatch> make_synthetic_triplets(std::size_t count, std::size_t channels,
                                                  std::size_t height, std::size_t width, int timestep,
                                                  const ToyDenoiser& denoiser, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> gain(0.4, 1.6);
    std::uniform_real_distribution<double> shift(0.4, 1.0);
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> direction(0, 3);

    std::vector<TripletBatch> out;
    out.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        LatentField noise(channels, height, width, timestep);
        for (double& v : noise.values()) v = normal(rng);
        LatentField anchor(channels, height, width, timestep);
        for (std::size_t c = 0; c < channels; ++c) blur_plane(noise.channel(c), anchor.mutable_channel(c), 1.5);
        double sq = 0.0;
        for (double v : anchor.values()) sq += v * v;
        const double sd = std::sqrt(sq / static_cast<double>(anchor.size()));
        for (double& v : anchor.values()) v /= sd;

        const int d = direction(rng);
        const int dx = d == 0 ? 1 : d == 1 ? -1 : 0;
        const int dy = d == 2 ? 1 : d == 3 ? -1 : 0;
        LatentField positive(channels, height, width, timestep);
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t x = 0; x < width; ++x) {
                    const auto sy = std::clamp<long long>(static_cast<long long>(y) - dy, 0, static_cast<long long>(height) - 1);
                    const auto sx = std::clamp<long long>(static_cast<long long>(x) - dx, 0, static_cast<long long>(width) - 1);
                    positive.at(c, y, x) = anchor.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                }
            }
        }

        LatentField negative = anchor;
        for (std::size_t c = 0; c < channels; ++c) {
            const double g = gain(rng);
            const double b = (coin(rng) ? 1.0 : -1.0) * shift(rng);
            auto plane = negative.mutable_channel(c);
            for (double& v : plane.values) v = g * v + b;
        }

        out.push_back({extract_features(anchor, denoiser), extract_features(positive, denoiser),
                       extract_features(negative, denoiser)});
    }
    return out;
}

LatentField embed_latent(const LatentField& latent, const ReadoutHead& head, const ToyDenoiser& denoiser) {
    return readout_forward(extract_features(latent, denoiser), head);
}

GuidanceValue rg_loss(const LatentField& current, const LatentField& reference_embedding,
                      const ReadoutHead& head, const ToyDenoiser& denoiser) {
    const FeatureField features = extract_features(current, denoiser);
    const LatentField emb = readout_forward(features, head);
    if (!emb.same_shape(reference_embedding)) {
        throw Error(ErrorKind::InvalidInput, "reference embedding shape does not match the current latent");
    }
    LatentField g(emb.channels(), emb.height(), emb.width(), emb.timestep());
    const double inv_cells = 1.0 / static_cast<double>(emb.plane_size());
    double loss = 0.0;
    for (std::size_t i = 0; i < emb.size(); ++i) {
        const double d = emb.values()[i] - reference_embedding.values()[i];
        loss += d * d * inv_cells;
        g.values()[i] = 2.0 * d * inv_cells;
    }
    GuidanceValue out;
    out.loss = loss;
    out.gradient = features_adjoint(readout_backward(features, head, g, true, false).features, denoiser);
    out.gradient.set_timestep(current.timestep());
    return out;
}

ReadoutHead bootstrap_readout_head(std::size_t channels, const ToyDenoiser& denoiser, int timestep,
                                   std::uint64_t seed) {
    const auto triplets = make_synthetic_triplets(50, channels, 16, 16, timestep, denoiser, seed);
    const ReadoutHead initial = ReadoutHead::random(denoiser.pyramid_levels(), channels, 8, 8, seed, 0.1);
    TrainOptions options;
    options.steps = 300;
    options.learning_rate = 0.1;
    return train_readout(triplets, initial, options).head;
}

std::string serialize_head(const ReadoutHead& head) {
    head.validate();
    nlohmann::json j;
    j["format"] = kHeadFormat;
    j["version"] = kHeadVersion;
    j["input_channels"] = head.input_channels;
    j["width"] = head.width;
    j["time_dim"] = head.time_dim;
    j["margin"] = head.margin;
    j["layers"] = nlohmann::json::array();
    for (std::size_t l = 0; l < head.layers(); ++l) {
        j["layers"].push_back({{"bottleneck", head.bottleneck[l]},
                               {"time_projection", head.time_projection[l]},
                               {"aggregation", head.aggregation[l]}});
    }
    return j.dump(2);
}

ReadoutHead deserialize_head(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Configuration, std::string("readout head file is not valid JSON: ") + e.what());
    }
    if (j.value("format", "") != kHeadFormat) throw Error(ErrorKind::Configuration, "not a readout head file");
    if (j.value("version", 0) != kHeadVersion) {
        throw Error(ErrorKind::Configuration, "unsupported readout head version");
    }
    ReadoutHead head;
    try {
        head.input_channels = j.at("input_channels").get<std::size_t>();
        head.width = j.at("width").get<std::size_t>();
        head.time_dim = j.at("time_dim").get<std::size_t>();
        head.margin = j.at("margin").get<double>();
        for (const auto& layer : j.at("layers")) {
            head.bottleneck.push_back(layer.at("bottleneck").get<std::vector<double>>());
            head.time_projection.push_back(layer.at("time_projection").get<std::vector<double>>());
            head.aggregation.push_back(layer.at("aggregation").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Configuration, std::string("malformed readout head: ") + e.what());
    }
    head.validate();
    return head;
}

void save_head(const ReadoutHead& head, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << serialize_head(head) << '\n';
}

ReadoutHead load_head(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot read readout head " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize_head(ss.str());
}

}  // namespace dragkit
