#include "dragkit/config.hpp"

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "dragkit/error.hpp"

namespace dragkit {

using nlohmann::json;

namespace {

template <typename T>
T get_as(const json& value, const std::string& key) {
    try {
        return value.get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorKind::Configuration, "config key '" + key + "' has the wrong type");
    }
}

}  // namespace

void EngineConfig::validate() const {
    drag.validate();
    if (schedule_steps < 1) throw Error(ErrorKind::Configuration, "schedule_steps must be at least 1");
    if (!(schedule_offset > 0.0)) throw Error(ErrorKind::Configuration, "schedule_offset must be positive");
    try {
        denoiser.validate();
        model().schedule.validate();
    } catch (const Error& e) {
        throw Error(ErrorKind::Configuration, e.what());
    }
    drag.resolve_timestep(schedule_steps);
}

DiffusionModel EngineConfig::model() const {
    DiffusionModel m;
    m.schedule = NoiseSchedule::cosine(schedule_steps, schedule_offset);
    m.denoiser = denoiser;
    return m;
}

EngineConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Configuration, std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorKind::Configuration, "config must be a JSON object");

    EngineConfig cfg;
    DragConfig& d = cfg.drag;
    for (const auto& [key, value] : doc.items()) {
        if (key == "drag_steps_per_denoise") d.drag_steps_per_denoise = get_as<int>(value, key);
        else if (key == "patch_radius") d.patch_radius = get_as<int>(value, key);
        else if (key == "tracking_radius") d.tracking_radius = get_as<int>(value, key);
        else if (key == "learning_rate") d.learning_rate = get_as<double>(value, key);
        else if (key == "max_drag_iterations") d.max_drag_iterations = get_as<int>(value, key);
        else if (key == "rg_weight") d.rg_weight = get_as<double>(value, key);
        else if (key == "rho") d.rho = get_as<double>(value, key);
        else if (key == "mask_sigma") d.mask_sigma = get_as<double>(value, key);
        else if (key == "latent_timestep") d.latent_timestep = get_as<int>(value, key);
        else if (key == "drag_timestep_fraction") d.drag_timestep_fraction = get_as<double>(value, key);
        else if (key == "aldd_denoise_steps") d.aldd_denoise_steps = get_as<int>(value, key);
        else if (key == "drag_weight") d.drag_weight = get_as<double>(value, key);
        else if (key == "ms_weight") d.ms_weight = get_as<double>(value, key);
        else if (key == "latent_downscale") d.latent_downscale = get_as<std::size_t>(value, key);
        else if (key == "mask_threshold") d.mask_threshold = get_as<double>(value, key);
        else if (key == "weight_epsilon") d.weight_epsilon = get_as<double>(value, key);
        else if (key == "convergence_radius") d.convergence_radius = get_as<double>(value, key);
        else if (key == "schedule_steps") cfg.schedule_steps = get_as<int>(value, key);
        else if (key == "schedule_offset") cfg.schedule_offset = get_as<double>(value, key);
        else if (key == "smoothing_sigma") cfg.denoiser.smoothing_sigma = get_as<double>(value, key);
        else if (key == "pyramid_sigmas") cfg.denoiser.pyramid_sigmas = get_as<std::vector<double>>(value, key);
        else if (key == "readout_head") cfg.readout_head = value.is_null() ? "" : get_as<std::string>(value, key);
        else if (key == "output_dir") cfg.output_dir = get_as<std::string>(value, key);
        else if (key == "debug") cfg.debug = get_as<bool>(value, key);
        else throw Error(ErrorKind::Configuration, "unknown config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

EngineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Configuration, "cannot read config " + path.string());
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_config(text);
}

std::string config_to_json(const EngineConfig& cfg, int indent) {
    const DragConfig& d = cfg.drag;
    json doc = {{"drag_steps_per_denoise", d.drag_steps_per_denoise},
                {"patch_radius", d.patch_radius},
                {"tracking_radius", d.tracking_radius},
                {"learning_rate", d.learning_rate},
                {"max_drag_iterations", d.max_drag_iterations},
                {"rg_weight", d.rg_weight},
                {"rho", d.rho},
                {"mask_sigma", d.mask_sigma},
                {"latent_timestep", d.latent_timestep},
                {"drag_timestep_fraction", d.drag_timestep_fraction},
                {"aldd_denoise_steps", d.aldd_denoise_steps},
                {"drag_weight", d.drag_weight},
                {"ms_weight", d.ms_weight},
                {"latent_downscale", d.latent_downscale},
                {"mask_threshold", d.mask_threshold},
                {"weight_epsilon", d.weight_epsilon},
                {"convergence_radius", d.convergence_radius},
                {"schedule_steps", cfg.schedule_steps},
                {"schedule_offset", cfg.schedule_offset},
                {"smoothing_sigma", cfg.denoiser.smoothing_sigma},
                {"pyramid_sigmas", cfg.denoiser.pyramid_sigmas},
                {"readout_head", cfg.readout_head},
                {"output_dir", cfg.output_dir},
                {"debug", cfg.debug}};
    return doc.dump(indent);
}

EngineConfig resolve_config(const std::optional<std::filesystem::path>& path) {
    if (path) return load_config(*path);
    if (const char* env = std::getenv("DRAGKIT_CONFIG"); env != nullptr && *env != '\0') return load_config(env);
    EngineConfig cfg;
    cfg.validate();
    return cfg;
}

ReadoutHead resolve_head(const EngineConfig& config, std::uint64_t seed) {
    if (config.drag.rg_weight == 0.0 && config.readout_head.empty()) return {};
    const DiffusionModel model = config.model();
    if (!config.readout_head.empty()) {
        ReadoutHead head = load_head(config.readout_head);
        if (head.layers() != model.denoiser.pyramid_levels() || head.input_channels != kLatentChannels) {
            throw Error(ErrorKind::Configuration, "readout head " + config.readout_head +
                                                      " does not match the feature layout");
        }
        return head;
    }
    return bootstrap_readout_head(kLatentChannels, model.denoiser,
                                  config.drag.resolve_timestep(config.schedule_steps), seed);
}

std::vector<PointPair> parse_points(const std::string& text, std::optional<Dims> dims) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::InvalidInput, std::string("points are not valid JSON: ") + e.what());
    }
    if (doc.is_object() && doc.contains("pairs")) doc = doc["pairs"];
    if (!doc.is_array()) throw Error(ErrorKind::InvalidInput, "points must be a list of {handle, target} entries");
    if (doc.empty()) throw Error(ErrorKind::InvalidInput, "points list is empty");

    auto read_pixel = [](const json& v, Pixel& out) {
        if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) return false;
        out = {v[0].get<int>(), v[1].get<int>()};
        return true;
    };
    std::vector<PointPair> pairs;
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& entry = doc[i];
        PointPair pair;
        std::string why;
        if (!entry.is_object() || !entry.contains("handle") || !entry.contains("target")) {
            why = "needs handle and target";
        } else if (!read_pixel(entry["handle"], pair.handle) || !read_pixel(entry["target"], pair.target)) {
            why = "coordinates must be [x, y] integers";
        } else if (dims && (!contains(*dims, pair.handle) || !contains(*dims, pair.target))) {
            why = "outside the " + std::to_string(dims->width) + "x" + std::to_string(dims->height) + " image";
        }
        if (!why.empty()) problems.push_back("entry " + std::to_string(i) + ": " + why);
        pairs.push_back(pair);
    }
    if (!problems.empty()) {
        std::string msg = "invalid points (";
        for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
        throw Error(ErrorKind::InvalidInput, msg + ")");
    }
    return pairs;
}

std::string points_to_json(const std::vector<PointPair>& pairs) {
    json arr = json::array();
    for (const auto& p : pairs) {
        arr.push_back({{"handle", {p.handle.x, p.handle.y}}, {"target", {p.target.x, p.target.y}}});
    }
    return arr.dump();
}

namespace {

constexpr char kFlowMagic[] = "DKFLOW1\n";
constexpr std::size_t kFlowMagicSize = 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

}  // namespace

std::vector<std::uint8_t> encode_displacement(const DisplacementField& field) {
    std::vector<std::uint8_t> out(kFlowMagic, kFlowMagic + kFlowMagicSize);
    put_u32(out, static_cast<std::uint32_t>(field.height));
    put_u32(out, static_cast<std::uint32_t>(field.width));
    for (const Point2& v : field.vectors) {
        for (double c : {v.x, v.y}) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(c)));
    }
    return out;
}

DisplacementField decode_displacement(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kFlowMagicSize + 8 || std::memcmp(bytes.data(), kFlowMagic, kFlowMagicSize) != 0) {
        throw Error(ErrorKind::Io, "not a displacement file");
    }
    DisplacementField f;
    f.height = get_u32(bytes.data() + kFlowMagicSize);
    f.width = get_u32(bytes.data() + kFlowMagicSize + 4);
    const std::size_t n = f.height * f.width;
    if (bytes.size() != kFlowMagicSize + 8 + n * 8) throw Error(ErrorKind::Io, "displacement file is truncated");
    const std::uint8_t* p = bytes.data() + kFlowMagicSize + 8;
    for (std::size_t i = 0; i < n; ++i, p += 8) {
        const Point2 v{std::bit_cast<float>(get_u32(p)), std::bit_cast<float>(get_u32(p + 4))};
        f.vectors.push_back(v);
        f.support.push_back(v.x != 0.0 || v.y != 0.0);
    }
    return f;
}

ScalarGrid2D displacement_preview(const DisplacementField& field) {
    ScalarGrid2D out(field.height, field.width, 0.0);
    const double peak = field.max_norm();
    if (peak == 0.0) return out;
    for (std::size_t i = 0; i < field.vectors.size(); ++i) {
        out.values()[i] = std::hypot(field.vectors[i].x, field.vectors[i].y) / peak;
    }
    return out;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << text;
}

}  // namespace dragkit
