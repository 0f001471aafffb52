#include "dragkit/cli.hpp"

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dragkit/config.hpp"
#include "dragkit/error.hpp"
#include "dragkit/service.hpp"

namespace dragkit {

namespace {

namespace fs = std::filesystem;

struct EditArgs {
    std::string image;
    std::string points;
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool debug = false;
};

struct ServeArgs {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string config;
};

struct TrainArgs {
    std::string out;
    std::string config;
    std::uint64_t seed = 0;
    std::size_t triplets = 50;
    int steps = 2000;
    double learning_rate = 0.1;
    std::size_t width = 8;
    std::size_t time_dim = 8;
};

std::optional<fs::path> optional_path(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
}

int fail(int code, const std::string& message) {
    std::cerr << "dragkit: " << message << "\n";
    return code;
}

int cmd_edit(const EditArgs& args) {
    EngineConfig config;
    try {
        config = resolve_config(optional_path(args.config));
    } catch (const Error& e) {
        return fail(kExitUsage, e.what());
    }
    if (!args.out.empty()) config.output_dir = args.out;
    config.debug = config.debug || args.debug;

    Image image;
    try {
        image = read_png(args.image);
    } catch (const Error& e) {
        return fail(kExitImage, "cannot read image " + args.image + ": " + e.what());
    }
    std::vector<PointPair> pairs;
    try {
        const auto bytes = read_bytes(args.points);
        pairs = parse_points(std::string(bytes.begin(), bytes.end()), image.dims());
    } catch (const Error& e) {
        return fail(kExitPoints, "points " + args.points + ": " + e.what());
    }

    try {
        const ReadoutHead head = resolve_head(config, args.seed);
        const DiffusionModel model = config.model();
        const EditResult result = run_drag_edit(image, pairs, config.drag, head, model);
        const fs::path out = config.output_dir;
        fs::create_directories(out);
        write_png(result.image, out / "edited.png");
        write_gray_png(result.image_mask.grid, out / "mask.png");
        write_text(out / "report.json", report_to_json(result.report) + "\n");
        if (config.debug) {
            write_bytes(out / "displacement.dkf", encode_displacement(result.displacement));
            write_gray_png(displacement_preview(result.displacement), out / "displacement.png");
            write_gray_png(result.session.mask.grid, out / "mask_latent.png");
            const LatentField warped = ddim_denoise(result.session.original_latent, 0, model.denoiser, model.schedule);
            write_png(decode_latent(warped, config.drag.latent_downscale), out / "warped.png");
            const LatentField dragged = ddim_denoise(result.session.current_latent, 0, model.denoiser, model.schedule);
            write_png(decode_latent(dragged, config.drag.latent_downscale), out / "drag_phase.png");
        }
        std::cout << "wrote " << (out / "edited.png").string() << " (MD " << result.report.mean_distance
                  << " px, " << result.report.drag_iterations << " drag iterations"
                  << (result.report.converged ? "" : ", not converged") << ")\n";
    } catch (const std::exception& e) {
        return fail(kExitEngine, e.what());
    }
    return kExitOk;
}

Service* g_service = nullptr;

void handle_signal(int) {
    if (g_service) g_service->stop();
}

int cmd_serve(const ServeArgs& args) {
    try {
        Service service(resolve_config(optional_path(args.config)));
        const int port = service.bind(args.host, args.port);
        std::cout << "listening on http://" << args.host << ":" << port << std::endl;
        g_service = &service;
        std::signal(SIGINT, handle_signal);
        std::signal(SIGTERM, handle_signal);
        service.listen();
        g_service = nullptr;
    } catch (const std::exception& e) {
        return fail(kExitUsage, e.what());
    }
    return kExitOk;
}

int cmd_train(const TrainArgs& args) {
    try {
        const EngineConfig config = resolve_config(optional_path(args.config));
        const DiffusionModel model = config.model();
        const int t = config.drag.resolve_timestep(config.schedule_steps);
        const auto triplets = make_synthetic_triplets(args.triplets, kLatentChannels, 16, 16, t, model.denoiser, args.seed);
        const ReadoutHead initial = ReadoutHead::random(model.denoiser.pyramid_levels(), kLatentChannels, args.width,
                                                        args.time_dim, args.seed, 0.1);
        TrainOptions options;
        options.steps = args.steps;
        options.learning_rate = args.learning_rate;
        const TrainResult result = train_readout(triplets, initial, options);
        save_head(result.head, args.out);
        std::cout << "mean triplet loss " << result.loss_history.front() << " -> " << result.loss_history.back()
                  << ", wrote " << args.out << "\n";
    } catch (const std::exception& e) {
        return fail(kExitEngine, e.what());
    }
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"dragkit: point-based drag editing"};
    app.require_subcommand(1);

    EditArgs edit;
    auto* edit_cmd = app.add_subcommand("edit", "Run one drag edit");
    edit_cmd->add_option("--image", edit.image, "Input PNG")->required();
    edit_cmd->add_option("--points", edit.points, "JSON list of {handle, target} pairs")->required();
    edit_cmd->add_option("--config", edit.config, "Config JSON (default: $DRAGKIT_CONFIG)");
    edit_cmd->add_option("--out", edit.out, "Output directory");
    edit_cmd->add_option("--seed", edit.seed, "Seed for the bootstrap readout head");
    edit_cmd->add_flag("--debug", edit.debug, "Also write intermediate artifacts");

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the local HTTP API");
    serve_cmd->add_option("--host", serve.host, "Bind address");
    serve_cmd->add_option("--port", serve.port, "Port (0 picks a free one)");
    serve_cmd->add_option("--config", serve.config, "Config JSON (default: $DRAGKIT_CONFIG)");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train-readout", "Train a readout head on synthetic triplets");
    train_cmd->add_option("--out", train.out, "Head file to write")->required();
    train_cmd->add_option("--config", train.config, "Config JSON (default: $DRAGKIT_CONFIG)");
    train_cmd->add_option("--seed", train.seed, "Seed for triplets and initialization");
    train_cmd->add_option("--triplets", train.triplets, "Number of triplets");
    train_cmd->add_option("--steps", train.steps, "Gradient steps");
    train_cmd->add_option("--lr", train.learning_rate, "Learning rate");
    train_cmd->add_option("--width", train.width, "Embedding width");
    train_cmd->add_option("--time-dim", train.time_dim, "Timestep embedding size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    if (*edit_cmd) return cmd_edit(edit);
    if (*serve_cmd) return cmd_serve(serve);
    return cmd_train(train);
}

}  // namespace dragkit
