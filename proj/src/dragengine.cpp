#include "dragkit/dragengine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include <json.hpp>

#include "dragkit/error.hpp"

namespace dragkit {

namespace {

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

Point2 clamp_to(Point2 p, std::size_t height, std::size_t width) {
    return {std::clamp(p.x, 0.0, static_cast<double>(width - 1)),
            std::clamp(p.y, 0.0, static_cast<double>(height - 1))};
}

// L1 between the patch around `dst` and the frozen patch around `src`; the
// gradient of the `dst` samples is accumulated into `grad`.
double patch_l1(const FeatureField& features, Point2 src, Point2 dst, int radius, FeatureField& grad) {
    double loss = 0.0;
    std::vector<double> upstream(features.vector_size());
    for (int oy = -radius; oy <= radius; ++oy) {
        for (int ox = -radius; ox <= radius; ++ox) {
            const Point2 q_src{src.x + ox, src.y + oy};
            const Point2 q_dst{dst.x + ox, dst.y + oy};
            const auto a = sample_features(features, q_dst);
            const auto b = sample_features(features, q_src);
            for (std::size_t k = 0; k < a.size(); ++k) {
                const double diff = a[k] - b[k];
                loss += std::abs(diff);
                upstream[k] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            }
            scatter_features(grad, q_dst, upstream);
        }
    }
    return loss;
}

void require_session_features(const EditSession& session, const FeatureField& features) {
    if (features.source_height != session.current_latent.height() ||
        features.source_width != session.current_latent.width() ||
        features.source_channels != session.current_latent.channels()) {
        throw Error(ErrorKind::InvalidInput, "features do not match the session latent");
    }
}

void check_finite(const LatentField& z, const char* what) {
    for (double v : z.values()) {
        if (!std::isfinite(v)) throw Error(ErrorKind::OptimizationDiverged, std::string(what) + " is not finite");
    }
}

std::vector<Point2> to_image(const std::vector<Point2>& points, std::size_t factor) {
    std::vector<Point2> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(latent_to_image(p, factor));
    return out;
}

void features_at(const LatentField& latent, const ToyDenoiser& denoiser, const std::vector<Point2>& points,
                 std::vector<std::vector<double>>& out) {
    const FeatureField f = extract_features(latent, denoiser);
    out.clear();
    for (const auto& p : points) out.push_back(sample_features(f, p));
}

// One backward DDIM step of both trajectories; cells where M == 0 are taken from the reference.
void denoise_session(EditSession& session, const ReadoutHead& head, const DiffusionModel& model) {
    const LatentField cur = ddim_step(session.current_latent, DdimDirection::Backward, model.denoiser, model.schedule);
    LatentField ref = ddim_step(session.reference_latent, DdimDirection::Backward, model.denoiser, model.schedule);
    LatentField blended = cur;
    const auto mask = session.mask.grid.values();
    const std::size_t plane = cur.plane_size();
    for (std::size_t c = 0; c < cur.channels(); ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            if (mask[i] == 0.0) blended.values()[c * plane + i] = ref.values()[c * plane + i];
        }
    }
    session.current_latent = std::move(blended);
    session.reference_latent = std::move(ref);
    if (head.layers() > 0) session.reference_embedding = embed_latent(session.reference_latent, head, model.denoiser);
    features_at(session.reference_latent, model.denoiser, session.track.initial_handles,
                session.track.reference_features);
}

}  // namespace

void DragConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::Configuration, msg); };
    if (drag_steps_per_denoise < 1) fail("drag_steps_per_denoise must be at least 1");
    if (patch_radius < 1) fail("patch_radius must be at least 1");
    if (tracking_radius < 1) fail("tracking_radius must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (max_drag_iterations < 0) fail("max_drag_iterations must be non-negative");
    if (!(rg_weight >= 0.0) || !std::isfinite(rg_weight)) fail("rg_weight must be non-negative");
    if (!(drag_weight >= 0.0) || !std::isfinite(drag_weight)) fail("drag_weight must be non-negative");
    if (!(ms_weight >= 0.0) || !std::isfinite(ms_weight)) fail("ms_weight must be non-negative");
    if (!(mask_sigma >= 0.0) || !std::isfinite(mask_sigma)) fail("mask_sigma must be non-negative");
    if (!(drag_timestep_fraction > 0.0 && drag_timestep_fraction <= 1.0)) {
        fail("drag_timestep_fraction must be in (0, 1]");
    }
    if (latent_downscale < 1) fail("latent_downscale must be at least 1");
    if (!(convergence_radius >= 0.0)) fail("convergence_radius must be non-negative");
    try {
        lwf_params().validate();
    } catch (const Error& e) {
        fail(e.what());
    }
}

int DragConfig::resolve_timestep(int total_steps) const {
    const int t = latent_timestep >= 0
                      ? latent_timestep
                      : static_cast<int>(std::ceil(drag_timestep_fraction * total_steps - 1e-9));
    if (t < 1 || t > total_steps) {
        throw Error(ErrorKind::Configuration, "drag timestep " + std::to_string(t) + " is outside [1, " +
                                                  std::to_string(total_steps) + "]");
    }
    return t;
}

int DragConfig::resolve_denoise_steps(int timestep) const {
    int n = aldd_denoise_steps;
    if (n < 0) n = (max_drag_iterations + drag_steps_per_denoise - 1) / drag_steps_per_denoise;
    return std::min(n, timestep);
}

LwfParams DragConfig::lwf_params() const {
    LwfParams p;
    p.rho = rho;
    p.weight_epsilon = weight_epsilon;
    p.mask_threshold = mask_threshold;
    return p;
}

LossValue motion_supervision_loss(const EditSession& session, const FeatureField& features,
                                  const ToyDenoiser& denoiser) {
    require_session_features(session, features);
    FeatureField grad = zero_features_like(features);
    double loss = 0.0;
    const TrackState& track = session.track;
    for (std::size_t i = 0; i < track.size(); ++i) {
        if (track.converged[i]) continue;
        const Point2 p = track.current_handles[i];
        const Point2 to{track.targets[i].x - p.x, track.targets[i].y - p.y};
        const double len = std::hypot(to.x, to.y);
        if (len == 0.0) continue;
        const double step = std::min(1.0, len) / len;
        const Point2 d{to.x * step, to.y * step};
        loss += patch_l1(features, p, {p.x + d.x, p.y + d.y}, session.config.patch_radius, grad);
    }
    return {loss, features_adjoint(grad, denoiser)};
}

LossValue drag_loss(const EditSession& session, const FeatureField& features, const ToyDenoiser& denoiser) {
    require_session_features(session, features);
    FeatureField grad = zero_features_like(features);
    double loss = 0.0;
    const TrackState& track = session.track;
    for (std::size_t i = 0; i < track.size(); ++i) {
        if (track.converged[i]) continue;
        const Point2 p = track.initial_handles[i];
        const Point2 q = track.targets[i];
        if (p.x == q.x && p.y == q.y) continue;
        loss += patch_l1(features, p, q, session.config.patch_radius, grad);
    }
    return {loss, features_adjoint(grad, denoiser)};
}

void apply_masked_update(EditSession& session, const LatentField& gradient, double learning_rate) {
    LatentField& z = session.current_latent;
    if (!z.same_shape(gradient)) throw Error(ErrorKind::InvalidInput, "gradient shape does not match the latent");
    if (session.mask.grid.height() != z.height() || session.mask.grid.width() != z.width()) {
        throw Error(ErrorKind::InvalidInput, "mask resolution does not match the latent");
    }
    check_finite(gradient, "gradient");
    const auto mask = session.mask.grid.values();
    const std::size_t plane = z.plane_size();
    for (std::size_t c = 0; c < z.channels(); ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            const double m = mask[i];
            if (m == 0.0) continue;
            const std::size_t k = c * plane + i;
            z.values()[k] -= learning_rate * m * gradient.values()[k];
        }
    }
}

TrackState track_points(const EditSession& session, const FeatureField& features) {
    require_session_features(session, features);
    TrackState next = session.track;
    const int r = session.config.tracking_radius;
    const double max_x = static_cast<double>(features.source_width - 1);
    const double max_y = static_cast<double>(features.source_height - 1);
    for (std::size_t i = 0; i < next.size(); ++i) {
        if (next.converged[i]) continue;
        const Point2 p = next.current_handles[i];
        const auto& ref = next.reference_features[i];
        double best_cost = std::numeric_limits<double>::infinity();
        std::tuple<int, int, int> best_key{0, 0, 0};  // (|d|^2, dy, dx)
        Point2 best = p;
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                const Point2 c{p.x + dx, p.y + dy};
                if (c.x < 0.0 || c.y < 0.0 || c.x > max_x || c.y > max_y) continue;
                const auto f = sample_features(features, c);
                double cost = 0.0;
                for (std::size_t k = 0; k < f.size(); ++k) cost += std::abs(f[k] - ref[k]);
                const std::tuple<int, int, int> key{dx * dx + dy * dy, dy, dx};
                if (cost < best_cost || (cost == best_cost && key < best_key)) {
                    best_cost = cost;
                    best_key = key;
                    best = c;
                }
            }
        }
        next.current_handles[i] = best;
        next.converged[i] = distance(best, next.targets[i]) <= session.config.convergence_radius;
    }
    return next;
}

std::vector<AlddAction> aldd_schedule(int total_denoise_steps, int drag_steps_per_denoise) {
    if (drag_steps_per_denoise < 1) throw Error(ErrorKind::InvalidInput, "B must be at least 1");
    if (total_denoise_steps < 0) throw Error(ErrorKind::InvalidInput, "denoise step count must be non-negative");
    std::vector<AlddAction> actions;
    for (int s = 0; s < total_denoise_steps; ++s) {
        actions.insert(actions.end(), static_cast<std::size_t>(drag_steps_per_denoise), AlddAction::Drag);
        actions.push_back(AlddAction::Denoise);
    }
    return actions;
}

double mean_distance(const std::vector<Point2>& final_handles, const std::vector<Point2>& targets) {
    if (final_handles.empty()) throw Error(ErrorKind::InvalidInput, "mean distance needs at least one point");
    if (final_handles.size() != targets.size()) {
        throw Error(ErrorKind::InvalidInput, "handle and target lists differ in length");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) total += distance(final_handles[i], targets[i]);
    return total / static_cast<double>(targets.size());
}

Point2 image_to_latent(Point2 p, std::size_t factor) {
    const double f = static_cast<double>(factor);
    const double c = (f - 1.0) / 2.0;
    return {(p.x - c) / f, (p.y - c) / f};
}

Point2 latent_to_image(Point2 p, std::size_t factor) {
    const double f = static_cast<double>(factor);
    const double c = (f - 1.0) / 2.0;
    return {p.x * f + c, p.y * f + c};
}

EditSession begin_session(const LatentField& inverted, Dims image_dims, const std::vector<PointPair>& pairs,
                          const DragConfig& config, const ReadoutHead& head, const DiffusionModel& model) {
    config.validate();
    if (pairs.empty()) throw Error(ErrorKind::InvalidInput, "at least one point pair is required");
    const std::size_t f = config.latent_downscale;
    if (image_dims.height != inverted.height() * f || image_dims.width != inverted.width() * f) {
        throw Error(ErrorKind::InvalidInput, "latent does not match the image size and downscale factor");
    }
    if (head.layers() > 0) {
        head.validate();
        if (head.layers() != model.denoiser.pyramid_levels() || head.input_channels != inverted.channels()) {
            throw Error(ErrorKind::Configuration, "readout head does not match the feature layout");
        }
    } else if (config.rg_weight > 0.0) {
        throw Error(ErrorKind::Configuration, "rg_weight > 0 needs a readout head");
    }

    EditSession session;
    session.config = config;
    session.mask = generate_soft_mask_at_scale(pairs, image_dims, config.mask_sigma, f);

    const std::size_t h = inverted.height();
    const std::size_t w = inverted.width();
    std::vector<PointPair> cells = downscale_pairs(pairs, f);
    for (auto& pair : cells) {
        for (Pixel* p : {&pair.handle, &pair.target}) {
            p->x = std::min(p->x, static_cast<int>(w) - 1);
            p->y = std::min(p->y, static_cast<int>(h) - 1);
        }
    }
    const DisplacementField field = compute_displacement_field(session.mask, cells, config.lwf_params());
    session.original_latent = warp_latent(inverted, field);
    session.reference_latent = session.original_latent;
    session.current_latent = session.original_latent;

    TrackState& track = session.track;
    track.pairs = pairs;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Point2 handle = image_to_latent({double(pairs[i].handle.x), double(pairs[i].handle.y)}, f);
        const Point2 v = field.at(static_cast<std::size_t>(cells[i].handle.y),
                                  static_cast<std::size_t>(cells[i].handle.x));
        const Point2 start = clamp_to({handle.x + v.x, handle.y + v.y}, h, w);
        const Point2 target =
            clamp_to(image_to_latent({double(pairs[i].target.x), double(pairs[i].target.y)}, f), h, w);
        track.initial_handles.push_back(start);
        track.current_handles.push_back(start);
        track.targets.push_back(target);
        track.converged.push_back(distance(start, target) <= config.convergence_radius);
    }
    features_at(session.original_latent, model.denoiser, track.initial_handles, track.reference_features);
    if (head.layers() > 0) session.reference_embedding = embed_latent(session.original_latent, head, model.denoiser);
    return session;
}

namespace {

IterationRecord drag_iteration(EditSession& session, const ReadoutHead& head, const DiffusionModel& model) {
    const DragConfig& cfg = session.config;
    const FeatureField features = extract_features(session.current_latent, model.denoiser);
    IterationRecord rec;
    rec.timestep = session.current_latent.timestep();

    const LossValue drag = drag_loss(session, features, model.denoiser);
    const LossValue ms = motion_supervision_loss(session, features, model.denoiser);
    rec.drag_loss = drag.loss;
    rec.ms_loss = ms.loss;
    LatentField total(session.current_latent.channels(), session.current_latent.height(),
                      session.current_latent.width(), session.current_latent.timestep());
    auto add = [&total](const LatentField& g, double weight) {
        if (weight == 0.0) return;
        for (std::size_t k = 0; k < total.size(); ++k) total.values()[k] += weight * g.values()[k];
    };
    add(drag.gradient, cfg.drag_weight);
    add(ms.gradient, cfg.ms_weight);
    if (head.layers() > 0) {
        const GuidanceValue rg = rg_loss(session.current_latent, session.reference_embedding, head, model.denoiser);
        rec.rg_loss = rg.loss;
        add(rg.gradient, cfg.rg_weight);
    }
    rec.total_loss = cfg.drag_weight * rec.drag_loss + cfg.ms_weight * rec.ms_loss + cfg.rg_weight * rec.rg_loss;

    apply_masked_update(session, total, cfg.learning_rate);
    session.track = track_points(session, extract_features(session.current_latent, model.denoiser));
    session.iteration += 1;
    rec.iteration = session.iteration;
    rec.handles = to_image(session.track.current_handles, cfg.latent_downscale);
    return rec;
}

bool all_converged(const TrackState& track) {
    return std::all_of(track.converged.begin(), track.converged.end(), [](bool c) { return c; });
}

}  // namespace

EditResult run_drag_edit(const Image& image, const std::vector<PointPair>& pairs, const DragConfig& config,
                         const ReadoutHead& head, const DiffusionModel& model,
                         const IterationCallback& on_iteration) {
    config.validate();
    model.schedule.validate();
    model.denoiser.validate();
    const std::size_t f = config.latent_downscale;
    const int t = config.resolve_timestep(model.schedule.total_steps);

    const LatentField z0 = encode_image(image, f);
    const LatentField zt = ddim_invert(z0, t, model.denoiser, model.schedule);
    EditSession session = begin_session(zt, image.dims(), pairs, config, head, model);

    EditResult result;
    result.image_mask = generate_soft_mask(pairs, image.dims(), config.mask_sigma);
    EditReport& report = result.report;
    report.timestep = t;
    report.initial_handles = to_image(session.track.initial_handles, f);
    report.targets = to_image(session.track.targets, f);

    for (AlddAction action : aldd_schedule(config.resolve_denoise_steps(t), config.drag_steps_per_denoise)) {
        if (action == AlddAction::Denoise) {
            denoise_session(session, head, model);
            report.denoise_actions += 1;
            continue;
        }
        if (session.iteration >= config.max_drag_iterations || all_converged(session.track)) continue;
        report.iterations.push_back(drag_iteration(session, head, model));
        if (on_iteration) on_iteration(report.iterations.back());
    }
    report.drag_iterations = session.iteration;
    report.converged = all_converged(session.track);
    report.final_handles = to_image(session.track.current_handles, f);
    report.mean_distance = mean_distance(report.final_handles, report.targets);
    result.session = session;

    // The displacement field is recomputed for export only.
    {
        std::vector<PointPair> cells = downscale_pairs(pairs, f);
        for (auto& pair : cells) {
            for (Pixel* p : {&pair.handle, &pair.target}) {
                p->x = std::min(p->x, static_cast<int>(zt.width()) - 1);
                p->y = std::min(p->y, static_cast<int>(zt.height()) - 1);
            }
        }
        result.displacement = compute_displacement_field(session.mask, cells, config.lwf_params());
    }

    while (session.current_latent.timestep() > 0) denoise_session(session, ReadoutHead{}, model);
    check_finite(session.current_latent, "edited latent");
    result.image = decode_latent(session.current_latent, f);
    return result;
}

Image inversion_round_trip(const Image& image, const DragConfig& config, const DiffusionModel& model) {
    config.validate();
    const int t = config.resolve_timestep(model.schedule.total_steps);
    const LatentField z0 = encode_image(image, config.latent_downscale);
    const LatentField zt = ddim_invert(z0, t, model.denoiser, model.schedule);
    return decode_latent(ddim_denoise(zt, 0, model.denoiser, model.schedule), config.latent_downscale);
}

Image make_blob_scene(std::size_t height, std::size_t width, Point2 centre, double sigma) {
    Image img(height, width);
    constexpr double kBlob[3] = {0.95, 0.55, 0.15};
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double u = static_cast<double>(x) / static_cast<double>(width);
            const double v = static_cast<double>(y) / static_cast<double>(height);
            const double bg[3] = {0.15 + 0.2 * u, 0.3 + 0.1 * v, 0.55 - 0.15 * u};
            const double r2 = std::pow(x - centre.x, 2) + std::pow(y - centre.y, 2);
            const double a = std::exp(-r2 / (2.0 * sigma * sigma));
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = bg[c] + a * (kBlob[c] - bg[c]);
        }
    }
    return img;
}

std::string report_to_json(const EditReport& report, int indent) {
    using nlohmann::json;
    auto points = [](const std::vector<Point2>& ps) {
        json arr = json::array();
        for (const auto& p : ps) arr.push_back({p.x, p.y});
        return arr;
    };
    json iterations = json::array();
    for (const auto& it : report.iterations) {
        iterations.push_back({{"iteration", it.iteration},
                              {"timestep", it.timestep},
                              {"drag_loss", it.drag_loss},
                              {"ms_loss", it.ms_loss},
                              {"rg_loss", it.rg_loss},
                              {"total_loss", it.total_loss},
                              {"handles", points(it.handles)}});
    }
    json doc = {{"format", "dragkit-report"},
                {"version", 1},
                {"timestep", report.timestep},
                {"drag_iterations", report.drag_iterations},
                {"denoise_actions", report.denoise_actions},
                {"converged", report.converged},
                {"mean_distance", report.mean_distance},
                {"initial_handles", points(report.initial_handles)},
                {"final_handles", points(report.final_handles)},
                {"targets", points(report.targets)},
                {"iterations", iterations}};
    return doc.dump(indent);
}

}  // namespace dragkit
