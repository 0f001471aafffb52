#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dragkit/dragengine.hpp"

namespace dragkit {

struct EngineConfig {
    DragConfig drag;
    int schedule_steps = 50;
    double schedule_offset = 0.008;
    ToyDenoiser denoiser;
    std::string readout_head;  // path to a head file; empty means bootstrap from the seed
    std::string output_dir = "dragkit-out";
    bool debug = false;

    void validate() const;
    DiffusionModel model() const;
};

// Flat JSON object; every key is optional and unknown keys are rejected.
EngineConfig parse_config(const std::string& text);
EngineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const EngineConfig& config, int indent = 2);

// Explicit path, else $DRAGKIT_CONFIG, else defaults.
EngineConfig resolve_config(const std::optional<std::filesystem::path>& path);

// Head named by the config, or the seeded bootstrap head.
ReadoutHead resolve_head(const EngineConfig& config, std::uint64_t seed);

// [{"handle": [x, y], "target": [x, y]}, ...] or {"pairs": [...]}. Throws InvalidInput
// naming every offending entry; with `dims` set, coordinates must lie inside the image.
std::vector<PointPair> parse_points(const std::string& text, std::optional<Dims> dims = std::nullopt);
std::string points_to_json(const std::vector<PointPair>& pairs);

// Two-channel float32 displacement file: "DKFLOW1\n", uint32 height, uint32 width
// (little endian), then (dx, dy) per cell in row-major order.
std::vector<std::uint8_t> encode_displacement(const DisplacementField& field);
DisplacementField decode_displacement(const std::vector<std::uint8_t>& bytes);

// Displacement magnitude scaled to [0, 1] at the largest vector.
ScalarGrid2D displacement_preview(const DisplacementField& field);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dragkit
