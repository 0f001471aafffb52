#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dragkit/fields.hpp"
#include "dragkit/image.hpp"
#include "dragkit/lwf.hpp"
#include "dragkit/readout.hpp"
#include "dragkit/softmask.hpp"
#include "dragkit/toydiffusion.hpp"

namespace dragkit {

struct DragConfig {
    int drag_steps_per_denoise = 10;  // B
    int patch_radius = 4;             // r1, latent cells
    int tracking_radius = 12;         // r2, latent cells
    double learning_rate = 0.02;
    int max_drag_iterations = 80;
    double rg_weight = 350.0;
    double rho = 0.15;
    double mask_sigma = 30.0;  // image pixels
    // Timestep at which dragging starts. Negative means ceil(drag_timestep_fraction * T).
    int latent_timestep = -1;
    double drag_timestep_fraction = 0.7;
    // Denoise actions interleaved with dragging. Negative means ceil(max_drag_iterations / B).
    int aldd_denoise_steps = -1;
    double drag_weight = 1.0;  // patch alignment loss
    double ms_weight = 0.0;    // motion supervision loss
    std::size_t latent_downscale = 8;
    double mask_threshold = 0.5;
    double weight_epsilon = 1e-6;
    double convergence_radius = 1.0;  // latent cells

    void validate() const;
    int resolve_timestep(int total_steps) const;
    int resolve_denoise_steps(int timestep) const;
    LwfParams lwf_params() const;
};

// Positions are in latent cells.
struct TrackState {
    std::vector<PointPair> pairs;           // image pixels, as supplied
    std::vector<Point2> initial_handles;    // start of optimisation (after the warp)
    std::vector<Point2> current_handles;
    std::vector<Point2> targets;
    std::vector<std::vector<double>> reference_features;  // at each initial handle
    std::vector<bool> converged;

    std::size_t size() const { return current_handles.size(); }
};

struct EditSession {
    LatentField original_latent;   // z_t^0, never modified
    LatentField reference_latent;  // z_t^0 carried through the same denoise steps
    LatentField current_latent;
    SoftMask mask;                 // latent resolution
    TrackState track;
    LatentField reference_embedding;
    DragConfig config;
    int iteration = 0;
};

struct LossValue {
    double loss = 0.0;
    LatentField gradient;  // w.r.t. the current latent
};

// Sum over pairs and patch offsets o in [-r1, r1]^2 of |F(p + d + o) - sg F(p + o)|_1,
// d = unit step from the current handle toward its target (shorter when closer).
LossValue motion_supervision_loss(const EditSession& session, const FeatureField& features,
                                  const ToyDenoiser& denoiser);

// Same patch L1, between the patch at the initial handle shifted by the full
// drag (initial handle -> target) and the stop-gradient patch at the initial handle.
LossValue drag_loss(const EditSession& session, const FeatureField& features, const ToyDenoiser& denoiser);

// z <- z - lr * M * g, with M broadcast over channels. Cells with M == 0 are untouched.
void apply_masked_update(EditSession& session, const LatentField& gradient, double learning_rate);

// Each live handle moves to the best L1 match of its reference feature within
// the (2 r2 + 1)^2 neighbourhood; ties go to the smaller displacement, then (dy, dx).
TrackState track_points(const EditSession& session, const FeatureField& features);

enum class AlddAction { Drag, Denoise };
std::vector<AlddAction> aldd_schedule(int total_denoise_steps, int drag_steps_per_denoise);

double mean_distance(const std::vector<Point2>& final_handles, const std::vector<Point2>& targets);

struct DiffusionModel {
    NoiseSchedule schedule = NoiseSchedule::cosine(50);
    ToyDenoiser denoiser;
};

// Pixel <-> latent cell coordinates under centre alignment.
Point2 image_to_latent(Point2 p, std::size_t factor);
Point2 latent_to_image(Point2 p, std::size_t factor);

// Builds the session for an already inverted latent: mask, warp, references.
EditSession begin_session(const LatentField& inverted, Dims image_dims, const std::vector<PointPair>& pairs,
                          const DragConfig& config, const ReadoutHead& head, const DiffusionModel& model);

struct IterationRecord {
    int iteration = 0;
    int timestep = 0;
    double drag_loss = 0.0;
    double ms_loss = 0.0;
    double rg_loss = 0.0;
    double total_loss = 0.0;
    std::vector<Point2> handles;  // image pixels, after tracking
};

struct EditReport {
    std::vector<IterationRecord> iterations;
    std::vector<Point2> initial_handles;  // image pixels
    std::vector<Point2> final_handles;
    std::vector<Point2> targets;
    double mean_distance = 0.0;
    bool converged = false;
    int drag_iterations = 0;
    int denoise_actions = 0;
    int timestep = 0;
};

struct EditResult {
    Image image;
    EditReport report;
    SoftMask image_mask;
    DisplacementField displacement;  // latent resolution
    EditSession session;             // state at the end of the drag phase
};

using IterationCallback = std::function<void(const IterationRecord&)>;

EditResult run_drag_edit(const Image& image, const std::vector<PointPair>& pairs, const DragConfig& config,
                         const ReadoutHead& head, const DiffusionModel& model = {},
                         const IterationCallback& on_iteration = {});

// Encode -> invert to t -> denoise -> decode, with no editing.
Image inversion_round_trip(const Image& image, const DragConfig& config, const DiffusionModel& model = {});

// Synthetic scene: a soft Gaussian blob of radius `sigma` on a two-tone background.
Image make_blob_scene(std::size_t height, std::size_t width, Point2 centre, double sigma);

std::string report_to_json(const EditReport& report, int indent = 2);

}  // namespace dragkit
