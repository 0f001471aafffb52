// One line per acceptance criterion; exit status is non-zero if any line fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dragkit/cli.hpp"
#include "dragkit/config.hpp"
#include "dragkit/dragengine.hpp"
#include "dragkit/error.hpp"
#include "../support/oracles.hpp"
#include "../support/tempdir.hpp"

using namespace dragkit;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
    void require(bool ok, const std::string& what) {
        if (!ok && pass) detail << "first failure: " << what << "; ";
        pass = pass && ok;
    }
};

int g_failures = 0;

void report(const std::string& name, const std::function<void(Outcome&)>& body) {
    Outcome o;
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << "threw: " << e.what();
    }
    if (!o.pass) ++g_failures;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
}

LatentField random_latent(std::size_t c, std::size_t h, std::size_t w, int t, std::mt19937_64& rng) {
    return LatentField(c, h, w, t, oracle::random_values(c * h * w, rng));
}

oracle::Grid plane_grid(const LatentField& layer, std::size_t c) {
    oracle::Grid g{layer.height(), layer.width(), {}};
    for (std::size_t y = 0; y < layer.height(); ++y) {
        for (std::size_t x = 0; x < layer.width(); ++x) g.v.push_back(layer.at(c, y, x));
    }
    return g;
}

// Patch L1 with the source patch read from frozen features (the stop-gradient side).
double frozen_patch_l1(const FeatureField& live, const FeatureField& frozen, Point2 src, Point2 dst, int r) {
    double total = 0.0;
    for (std::size_t l = 0; l < live.layers.size(); ++l) {
        const double s = double(live.scales[l]);
        for (std::size_t c = 0; c < live.layers[l].channels(); ++c) {
            const oracle::Grid g = plane_grid(live.layers[l], c), h = plane_grid(frozen.layers[l], c);
            for (int oy = -r; oy <= r; ++oy) {
                for (int ox = -r; ox <= r; ++ox) {
                    total += std::abs(oracle::bilinear(g, (dst.x + ox) / s, (dst.y + oy) / s) -
                                      oracle::bilinear(h, (src.x + ox) / s, (src.y + oy) / s));
                }
            }
        }
    }
    return total;
}

EditSession bare_session(const LatentField& z, Point2 handle, Point2 target, int r1) {
    EditSession s;
    s.original_latent = s.reference_latent = s.current_latent = z;
    s.mask = {ScalarGrid2D(z.height(), z.width(), 1.0), 0.0};
    s.config.patch_radius = r1;
    s.track.pairs = {PointPair{}};
    s.track.initial_handles = {handle};
    s.track.current_handles = {handle};
    s.track.targets = {target};
    s.track.converged = {false};
    return s;
}

// Checks `coords` entries of an analytic gradient against central differences.
bool fd_agrees(const std::function<double(const std::vector<double>&)>& f, const std::vector<double>& x,
               const std::vector<double>& analytic, const std::vector<std::size_t>& coords, double h) {
    for (std::size_t i : coords) {
        if (!oracle::gradient_close(analytic[i], oracle::central_difference(f, x, i, h))) return false;
    }
    return true;
}

std::vector<std::size_t> pick(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(n, k));
    return idx;
}

void gradient_suite(Outcome& o) {
    const auto t0 = Clock::now();
    constexpr int kInstances = 20;
    std::mt19937_64 rng(1001);
    std::uniform_real_distribution<double> pos(0.3, 6.7);
    const ToyDenoiser d;
    int counts[6] = {};

    for (int n = 0; n < kInstances; ++n) {
        // bilinear sampling: w.r.t. the point and the grid values
        {
            const std::size_t h = 5, w = 7;
            const auto vals = oracle::random_values(h * w, rng);
            const Point2 p{pos(rng) * 0.9, pos(rng) * 0.55};
            const PlaneView view{h, w, vals};
            const BilinearSample s = sample_bilinear_with_grad(view, p);
            auto fx = [&](const std::vector<double>& q) { return sample_bilinear(view, {q[0], q[1]}); };
            std::vector<double> grad_v(h * w, 0.0);
            for (int k = 0; k < 4; ++k) grad_v[s.cells[k]] += s.weights[k];
            auto fv = [&](const std::vector<double>& v) { return sample_bilinear({h, w, v}, p); };
            const bool ok = fd_agrees(fx, {p.x, p.y}, {s.d_dx, s.d_dy}, {0, 1}, 1e-6) &&
                            fd_agrees(fv, vals, grad_v, pick(h * w, h * w, rng), 1e-4) &&
                            std::abs(s.value - oracle::bilinear({h, w, vals}, p.x, p.y)) <= 1e-12;
            o.require(ok, "bilinear instance " + std::to_string(n));
            counts[0] += ok;
        }
        // feature extraction, through a random linear functional
        {
            const LatentField z = random_latent(2, 8, 9, 20, rng);
            FeatureField wts = extract_features(z, d);
            for (auto& layer : wts.layers) {
                const auto r = oracle::random_values(layer.size(), rng);
                std::copy(r.begin(), r.end(), layer.values().begin());
            }
            auto f = [&](const std::vector<double>& v) {
                const FeatureField ff = extract_features(LatentField(2, 8, 9, 20, v), d);
                double total = 0.0;
                for (std::size_t l = 0; l < ff.layers.size(); ++l) {
                    for (std::size_t i = 0; i < ff.layers[l].size(); ++i) total += wts.layers[l].values()[i] * ff.layers[l].values()[i];
                }
                return total;
            };
            const LatentField g = features_adjoint(wts, d);
            const std::vector<double> x(z.values().begin(), z.values().end());
            const bool ok = fd_agrees(f, x, {g.values().begin(), g.values().end()}, pick(x.size(), 24, rng), 1e-4);
            o.require(ok, "features instance " + std::to_string(n));
            counts[1] += ok;
        }
        // L_ms and L_drag
        {
            const LatentField z = random_latent(2, 8, 8, 35, rng);
            const Point2 p0{pos(rng), pos(rng)}, p{pos(rng), pos(rng)}, q{pos(rng), pos(rng)};
            EditSession s = bare_session(z, p0, q, 1);
            s.track.current_handles = {p};
            const FeatureField f = extract_features(z, d);
            const LossValue ms = motion_supervision_loss(s, f, d);
            const LossValue dl = drag_loss(s, f, d);
            const double len = std::hypot(q.x - p.x, q.y - p.y);
            const double step = std::min(1.0, len) / len;
            const Point2 pd{p.x + (q.x - p.x) * step, p.y + (q.y - p.y) * step};
            auto f_ms = [&](const std::vector<double>& v) {
                return frozen_patch_l1(extract_features(LatentField(2, 8, 8, 35, v), d), f, p, pd, 1);
            };
            auto f_drag = [&](const std::vector<double>& v) {
                return frozen_patch_l1(extract_features(LatentField(2, 8, 8, 35, v), d), f, p0, q, 1);
            };
            const std::vector<double> x(z.values().begin(), z.values().end());
            const bool ok_ms = std::abs(ms.loss - f_ms(x)) <= 1e-9 &&
                               fd_agrees(f_ms, x, {ms.gradient.values().begin(), ms.gradient.values().end()}, pick(x.size(), 24, rng), 1e-6);
            const bool ok_drag = std::abs(dl.loss - f_drag(x)) <= 1e-9 &&
                                 fd_agrees(f_drag, x, {dl.gradient.values().begin(), dl.gradient.values().end()}, pick(x.size(), 24, rng), 1e-6);
            o.require(ok_ms, "L_ms instance " + std::to_string(n));
            o.require(ok_drag, "L_drag instance " + std::to_string(n));
            counts[2] += ok_ms;
            counts[3] += ok_drag;
        }
        // L_rg
        {
            const ReadoutHead head = ReadoutHead::random(3, 2, 4, 4, 2000 + n);
            const LatentField z0 = random_latent(2, 8, 8, 35, rng), z = random_latent(2, 8, 8, 35, rng);
            const LatentField ref = embed_latent(z0, head, d);
            const GuidanceValue g = rg_loss(z, ref, head, d);
            auto f = [&](const std::vector<double>& v) { return rg_loss(LatentField(2, 8, 8, 35, v), ref, head, d).loss; };
            const std::vector<double> x(z.values().begin(), z.values().end());
            const bool ok = fd_agrees(f, x, {g.gradient.values().begin(), g.gradient.values().end()}, pick(x.size(), 24, rng), 1e-4);
            o.require(ok, "L_rg instance " + std::to_string(n));
            counts[4] += ok;
        }
        // triplet loss w.r.t. every head parameter
        {
            const auto data = make_synthetic_triplets(2, 2, 6, 6, 20, d, 3000 + n);
            ReadoutHead head = ReadoutHead::random(3, 2, 3, 4, 4000 + n);
            head.margin = 1.0;
            const MeanTripletValue v = mean_triplet_loss(data, head, true);
            auto f = [&](const std::vector<double>& p) {
                ReadoutHead h2 = head;
                h2.set_parameters(p);
                return mean_triplet_loss(data, h2).loss;
            };
            const auto p = head.parameters();
            const bool ok = v.loss > 0.0 && fd_agrees(f, p, v.parameter_grad, pick(p.size(), p.size(), rng), 1e-5);
            o.require(ok, "triplet instance " + std::to_string(n));
            counts[5] += ok;
        }
    }
    const double secs = seconds_since(t0);
    o.require(secs < 60.0, "runtime under 60 s");
    o.detail << "passing instances bilinear/features/ms/drag/rg/triplet = " << counts[0] << "/" << counts[1] << "/"
             << counts[2] << "/" << counts[3] << "/" << counts[4] << "/" << counts[5] << " of " << kInstances
             << ", " << secs << " s";
}

void soft_mask_suite(Outcome& o) {
    std::mt19937_64 rng(1101);
    const Dims dims{40, 48};
    std::uniform_int_distribution<int> ux(0, 47), uy(0, 39);
    int conform = 0;
    for (int n = 0; n < 1000; ++n) {
        const PointPair p{{ux(rng), uy(rng)}, {ux(rng), uy(rng)}};
        const PathRaster r = rasterize_drag_path(p, dims);
        const auto expect = oracle::path_cells(p.handle.x, p.handle.y, p.target.x, p.target.y);
        bool ok = r.cells.size() == expect.size() && r.sample_count == expect.size();
        for (std::size_t k = 0; ok && k < expect.size(); ++k) ok = r.cells[k] == Pixel{expect[k].first, expect[k].second};
        conform += ok;
    }
    o.require(conform == 1000, "raster formula conformance");

    double worst_dense = 0.0;
    bool normalized = true, permutation = true, monotone = true;
    for (int n = 0; n < 20; ++n) {
        std::vector<PointPair> pairs;
        for (int k = 0; k < 1 + n % 4; ++k) pairs.push_back({{ux(rng), uy(rng)}, {ux(rng), uy(rng)}});
        const double sigma = 0.5 + 0.25 * n;
        const SoftMask m = generate_soft_mask(pairs, dims, sigma);
        normalized = normalized && m.grid.max() == 1.0 &&
                     std::all_of(m.grid.values().begin(), m.grid.values().end(), [](double v) { return v >= 0.0 && v <= 1.0; });
        auto shuffled = pairs;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        permutation = permutation && generate_soft_mask(shuffled, dims, sigma).grid == m.grid;

        oracle::Grid binary{dims.height, dims.width, std::vector<double>(dims.height * dims.width, 0.0)};
        for (const auto& p : pairs) {
            for (auto [x, y] : oracle::path_cells(p.handle.x, p.handle.y, p.target.x, p.target.y)) binary.v[y * dims.width + x] = 1.0;
        }
        const oracle::Grid dense = oracle::dense_blur(binary, sigma);
        const double peak = *std::max_element(dense.v.begin(), dense.v.end());
        for (std::size_t i = 0; i < dense.v.size(); ++i) worst_dense = std::max(worst_dense, std::abs(dense.v[i] / peak - m.grid.values()[i]));

        std::size_t last_support = 0;
        for (double s : {0.0, 0.5, 1.0, 2.0, 3.0, 5.0}) {
            const SoftMask ms = generate_soft_mask(pairs, dims, s);
            const auto support = std::size_t(std::count_if(ms.grid.values().begin(), ms.grid.values().end(), [](double v) { return v > 0.0; }));
            const auto half = std::size_t(std::count_if(ms.grid.values().begin(), ms.grid.values().end(), [](double v) { return v >= 0.5; }));
            // overlapping paths raise the peak, so only the support is checked here
            monotone = monotone && support >= last_support;
            last_support = support;
        }
    }
    // half-max area: single paths kept ceil(3 sigma) clear of the edge, where replication would pile up mass
    int single_ok = 0;
    const Dims wide{80, 96};
    std::uniform_int_distribution<int> ix(14, 81), iy(14, 65);
    for (int n = 0; n < 200; ++n) {
        const std::vector<PointPair> one{{{ix(rng), iy(rng)}, {ix(rng), iy(rng)}}};
        std::size_t last = 0;
        bool ok = true;
        for (double s : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 4.5}) {
            const SoftMask ms = generate_soft_mask(one, wide, s);
            const auto half = std::size_t(std::count_if(ms.grid.values().begin(), ms.grid.values().end(), [](double v) { return v >= 0.5; }));
            ok = ok && half >= last;
            last = half;
        }
        single_ok += ok;
    }
    monotone = monotone && single_ok == 200;
    o.require(normalized, "max = 1");
    o.require(permutation, "permutation invariance");
    o.require(monotone, "sigma-monotone footprint");
    o.require(worst_dense <= 1e-9, "dense convolution oracle");
    o.detail << conform << "/1000 rasters conform, " << single_ok << "/200 single paths with growing half-max area, dense-oracle max error " << worst_dense;
}

void lwf_suite(Outcome& o) {
    std::mt19937_64 rng(1201);
    std::uniform_real_distribution<double> u(0.0, 60.0);
    double worst_sum = 0.0;
    for (int n = 0; n < 2000; ++n) {
        std::vector<Point2> hs(1 + n % 5);
        for (auto& h : hs) h = {u(rng), u(rng)};
        const auto w = inverse_distance_weights({u(rng), u(rng)}, hs, 1e-6);
        double total = 0.0;
        for (double v : w) total += v;
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    }
    o.require(worst_sum <= 1e-12, "weights sum to one");

    bool bounded = true;
    std::uniform_int_distribution<int> ux(0, 39), uy(0, 31);
    for (int n = 0; n < 20; ++n) {
        std::vector<PointPair> pairs;
        double longest = 0.0;
        for (int k = 0; k < 1 + n % 3; ++k) {
            const PointPair p{{ux(rng), uy(rng)}, {ux(rng), uy(rng)}};
            longest = std::max(longest, std::hypot(p.target.x - p.handle.x, p.target.y - p.handle.y));
            pairs.push_back(p);
        }
        LwfParams params;
        params.rho = 0.05 * (n + 1);
        const DisplacementField f = compute_displacement_field(generate_soft_mask(pairs, {32, 40}, 3.0), pairs, params);
        for (const auto& v : f.vectors) bounded = bounded && std::hypot(v.x, v.y) <= params.rho * longest + 1e-12;
    }
    o.require(bounded, "displacement bound");

    // supported region x in [0, 20]; handle at x = 10, dragged toward +x
    ScalarGrid2D rect(9, 30, 0.0);
    for (std::size_t y = 0; y < 9; ++y) {
        for (std::size_t x = 0; x <= 20; ++x) rect.at(y, x) = 1.0;
    }
    const SoftMask rm{rect, 0.0};
    const double lam = stretch_factor({5, 4}, {10, 4}, {3, 0}, rm, 0.5);
    o.require(lam == 0.5, "rectangle stretch factor 0.5");
    o.require(stretch_factor({10, 4}, {10, 4}, {3, 0}, rm, 0.5) == 1.0, "stretch factor at the handle");
    o.require(stretch_factor({0, 4}, {10, 4}, {3, 0}, rm, 0.5) == 0.0, "stretch factor on the boundary");

    const LatentField z = random_latent(4, 12, 12, 35, rng);
    DisplacementField zero;
    zero.height = zero.width = 12;
    zero.vectors.assign(144, Point2{});
    zero.support.assign(144, 1);
    o.require(warp_latent(z, zero) == z, "zero-field warp identity");

    DragConfig cfg;
    cfg.latent_downscale = 2;
    cfg.mask_sigma = 6.0;
    cfg.rho = 0.0;
    cfg.drag_weight = cfg.ms_weight = cfg.rg_weight = 0.0;
    const Image img = make_blob_scene(64, 64, {24, 32}, 5.0);
    const EditResult r = run_drag_edit(img, {{{24, 32}, {40, 32}}}, cfg, ReadoutHead{});
    const double mae = mean_absolute_error(r.image, inversion_round_trip(img, cfg));
    o.require(mae <= 1e-4, "rho 0 round trip");
    o.detail << "weight-sum error " << worst_sum << ", lambda " << lam << ", rho=0 edit vs round trip MAE " << mae;
}

void ddim_suite(Outcome& o) {
    std::mt19937_64 rng(1301);
    const NoiseSchedule s = NoiseSchedule::cosine(50);
    const ToyDenoiser d;
    double worst_step = 0.0;
    for (int t = 0; t < 50; ++t) {
        const LatentField z = random_latent(4, 16, 16, t, rng);
        const LatentField back = ddim_step(ddim_step(z, DdimDirection::Forward, d, s), DdimDirection::Backward, d, s);
        for (std::size_t i = 0; i < z.size(); ++i) worst_step = std::max(worst_step, std::abs(back.values()[i] - z.values()[i]));
    }
    double worst_mae = 0.0;
    for (int n = 0; n < 5; ++n) {
        const LatentField z = random_latent(4, 16, 16, 0, rng);
        const LatentField back = ddim_denoise(ddim_invert(z, 50, d, s), 0, d, s);
        double total = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) total += std::abs(back.values()[i] - z.values()[i]);
        worst_mae = std::max(worst_mae, total / double(z.size()));
    }
    o.require(worst_step <= 1e-6, "one-step inverse");
    o.require(worst_mae <= 1e-4, "50-step round trip");
    o.detail << "one-step max error " << worst_step << ", 50-step round-trip MAE " << worst_mae;
}

void tracking_suite(Outcome& o) {
    std::mt19937_64 rng(1401);
    ToyDenoiser d;
    d.pyramid_sigmas = {0.75};
    const int r2 = 6;
    const std::size_t H = 40, W = 40;
    const LatentField z = random_latent(3, H, W, 35, rng);
    const Point2 handle{20, 19};
    const auto ref = sample_features(extract_features(z, d), handle);
    int recovered = 0, total = 0;
    for (int dy = -r2; dy <= r2; ++dy) {
        for (int dx = -r2; dx <= r2; ++dx) {
            LatentField moved = random_latent(3, H, W, 35, rng);
            for (std::size_t c = 0; c < 3; ++c) {
                for (long y = 0; y < long(H); ++y) {
                    for (long x = 0; x < long(W); ++x) {
                        const long sy = y - dy, sx = x - dx;
                        if (sy >= 0 && sx >= 0 && sy < long(H) && sx < long(W)) moved.at(c, y, x) = z.at(c, sy, sx);
                    }
                }
            }
            EditSession s;
            s.current_latent = moved;
            s.config.tracking_radius = r2;
            s.track.current_handles = {handle};
            s.track.targets = {{0, 0}};
            s.track.reference_features = {ref};
            s.track.converged = {false};
            const Point2 p = track_points(s, extract_features(moved, d)).current_handles[0];
            recovered += p.x == handle.x + dx && p.y == handle.y + dy;
            ++total;
        }
    }
    o.require(recovered == total, "translation recovery");

    // every pair of equally good candidates: the winner has the smaller (|d|^2, dy, dx)
    ToyDenoiser flat;
    flat.pyramid_sigmas = {0.0};
    const int r = 2;
    int ties = 0, correct = 0;
    std::vector<std::pair<int, int>> offs;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) offs.emplace_back(dx, dy);
    }
    for (std::size_t a = 0; a < offs.size(); ++a) {
        for (std::size_t b = a + 1; b < offs.size(); ++b) {
            LatentField f(1, 9, 9, 35, 0.0);
            f.at(0, 4 + offs[a].second, 4 + offs[a].first) = 1.0;
            f.at(0, 4 + offs[b].second, 4 + offs[b].first) = 1.0;
            EditSession s;
            s.current_latent = f;
            s.config.tracking_radius = r;
            s.track.current_handles = {{4, 4}};
            s.track.targets = {{0, 0}};
            s.track.reference_features = {{1.0}};
            s.track.converged = {false};
            const Point2 p = track_points(s, extract_features(f, flat)).current_handles[0];
            auto key = [](std::pair<int, int> q) { return std::make_tuple(q.first * q.first + q.second * q.second, q.second, q.first); };
            const auto win = key(offs[a]) < key(offs[b]) ? offs[a] : offs[b];
            correct += p.x == 4 + win.first && p.y == 4 + win.second;
            ++ties;
        }
    }
    o.require(correct == ties, "tie-break enumeration");
    o.detail << recovered << "/" << total << " translations within r2 = " << r2 << " recovered, " << correct << "/"
             << ties << " ties resolved by the rule";
}

void blob_benchmark(Outcome& o) {
    const auto t0 = Clock::now();
    const Image img = make_blob_scene(64, 64, {24, 32}, 5.0);
    const std::vector<PointPair> pairs{{{24, 32}, {40, 32}}};
    DragConfig cfg;
    cfg.latent_downscale = 2;
    cfg.mask_sigma = 6.0;
    const DiffusionModel model;
    const ReadoutHead head = bootstrap_readout_head(kLatentChannels, model.denoiser, cfg.resolve_timestep(50), 7);

    const EditResult full = run_drag_edit(img, pairs, cfg, head, model);
    DragConfig lwf_only = cfg;
    lwf_only.max_drag_iterations = 0;
    const EditResult baseline = run_drag_edit(img, pairs, lwf_only, head, model);
    DragConfig no_rg = cfg;
    no_rg.rg_weight = 0.0;
    const EditResult plain = run_drag_edit(img, pairs, no_rg, ReadoutHead{}, model);

    std::vector<std::uint8_t> outside(64 * 64);
    for (std::size_t i = 0; i < outside.size(); ++i) outside[i] = full.image_mask.grid.values()[i] < 0.5;
    const double mae_rg = mean_absolute_error(full.image, img, outside);
    const double mae_plain = mean_absolute_error(plain.image, img, outside);
    const double secs = seconds_since(t0);

    o.require(full.report.mean_distance <= 3.0, "MD <= 3");
    o.require(full.report.mean_distance < baseline.report.mean_distance, "MD below LWF-only");
    o.require(mae_rg < mae_plain, "outside-mask MAE rg 350 < rg 0");
    o.require(secs <= 120.0, "runtime under 2 min");
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "MD %.3f px (LWF-only %.3f px, %d drag iterations), outside-mask MAE rg350 %.6f vs rg0 %.6f, %.1f s",
                  full.report.mean_distance, baseline.report.mean_distance, full.report.drag_iterations, mae_rg,
                  mae_plain, secs);
    o.detail << buf;
}

void determinism(Outcome& o) {
    TempDir dir;
    const std::string fixtures = DRAGKIT_FIXTURES;
    auto args_for = [&](const std::string& sub) {
        return std::vector<std::string>{"dragkit", "edit", "--image", fixtures + "/blob.png", "--points",
                                        fixtures + "/blob_points.json", "--config", fixtures + "/blob_config.json",
                                        "--out", (dir / sub).string(), "--seed", "7"};
    };
    for (const char* sub : {"a", "b"}) {
        const auto args = args_for(sub);
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream sink;
        auto* old = std::cout.rdbuf(sink.rdbuf());
        const int code = run_cli(int(argv.size()), argv.data());
        std::cout.rdbuf(old);
        o.require(code == kExitOk, std::string("edit run ") + sub);
    }
    int identical = 0;
    for (const char* name : {"edited.png", "mask.png", "report.json"}) {
        const bool same = read_bytes(dir / "a" / name) == read_bytes(dir / "b" / name);
        o.require(same, name);
        identical += same;
    }
    o.detail << identical << "/3 output files byte-identical across two seeded runs";
}

void readout_training(Outcome& o) {
    const ToyDenoiser d;
    const double delta = 0.2;
    const auto data = make_synthetic_triplets(50, kLatentChannels, 16, 16, 35, d, 7);
    ReadoutHead head = ReadoutHead::random(d.pyramid_levels(), kLatentChannels, 8, 8, 7);
    head.margin = delta;
    TrainOptions opt;
    opt.steps = 2000;
    opt.learning_rate = 0.1;
    const TrainResult r = train_readout(data, head, opt);
    const auto& h = r.loss_history;
    bool monotone = h.size() > 100;
    for (std::size_t i = 1; monotone && i <= 100; ++i) monotone = h[i] < h[i - 1];
    std::size_t reached = h.size();
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (h[i] < 0.05 * delta) {
            reached = i;
            break;
        }
    }
    o.require(monotone, "monotone over the first 100 steps");
    o.require(reached <= 2000, "below 0.05 delta within 2000 steps");
    o.detail << "loss " << h.front() << " -> " << h[std::min<std::size_t>(100, h.size() - 1)] << " at step 100, "
             << "below " << 0.05 * delta << " at step " << reached;
}

}  // namespace

int main() {
    report("gradient suite", gradient_suite);
    report("soft-mask suite", soft_mask_suite);
    report("LWF suite", lwf_suite);
    report("DDIM suite", ddim_suite);
    report("tracking suite", tracking_suite);
    report("blob benchmark", blob_benchmark);
    report("determinism", determinism);
    report("readout training", readout_training);
    return g_failures == 0 ? 0 : 1;
}
