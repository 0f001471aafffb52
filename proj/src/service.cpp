#include "dragkit/service.hpp"

#include <cstdio>
#include <random>

#include <httplib.h>
#include <json.hpp>

#include "dragkit/error.hpp"

namespace dragkit {

using nlohmann::json;

namespace {

constexpr std::size_t kLossTail = 10;

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

void send_png(httplib::Response& res, const std::vector<std::uint8_t>& png) {
    res.status = 200;
    res.set_content(std::string(png.begin(), png.end()), "image/png");
}

json iteration_json(const IterationRecord& it) {
    json handles = json::array();
    for (const auto& p : it.handles) handles.push_back({p.x, p.y});
    return {{"iteration", it.iteration}, {"timestep", it.timestep},   {"drag_loss", it.drag_loss},
            {"ms_loss", it.ms_loss},     {"rg_loss", it.rg_loss},     {"total_loss", it.total_loss},
            {"handles", handles}};
}

std::string make_id(std::uint64_t salt, std::uint64_t counter) {
    std::mt19937_64 mix(salt ^ (counter * 0x9e3779b97f4a7c15ULL));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(mix()));
    return buf;
}

}  // namespace

std::string to_string(SessionStatus status) {
    switch (status) {
        case SessionStatus::Idle: return "idle";
        case SessionStatus::Running: return "running";
        case SessionStatus::Done: return "done";
        case SessionStatus::Failed: return "failed";
    }
    return "unknown";
}

Service::Service(EngineConfig config) : config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
    config_.validate();
    salt_ = std::random_device{}();
    salt_ = (salt_ << 32) ^ std::random_device{}();
    install_routes();
}

Service::~Service() {
    stop();
    wait_for_workers();
}

int Service::bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void Service::listen() { server_->listen_after_bind(); }

void Service::start() {
    listener_ = std::thread([this] { listen(); });
    server_->wait_until_ready();
}

void Service::stop() {
    server_->stop();
    if (listener_.joinable()) listener_.join();
}

void Service::wait_for_workers() {
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(mutex_);
        workers.swap(workers_);
    }
    for (auto& w : workers) w.join();
}

std::shared_ptr<SessionRecord> Service::find(const std::string& id) {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

void Service::run_session(std::shared_ptr<SessionRecord> record, std::vector<PointPair> pairs, std::uint64_t seed) {
    try {
        const ReadoutHead head = resolve_head(config_, seed);
        const Image source = [&] {
            std::lock_guard lock(mutex_);
            return record->source;
        }();
        const EditResult result =
            run_drag_edit(source, pairs, config_.drag, head, config_.model(), [&](const IterationRecord& it) {
                std::lock_guard lock(mutex_);
                record->iterations.push_back(it);
            });
        auto edited = encode_png(result.image);
        auto mask = encode_gray_png(result.image_mask.grid);
        auto flow = encode_gray_png(displacement_preview(result.displacement));
        auto report = report_to_json(result.report);
        std::lock_guard lock(mutex_);
        record->edited_png = std::move(edited);
        record->mask_png = std::move(mask);
        record->displacement_png = std::move(flow);
        record->report_json = std::move(report);
        record->status = SessionStatus::Done;
    } catch (const std::exception& e) {
        std::lock_guard lock(mutex_);
        record->error = e.what();
        record->status = SessionStatus::Failed;
    }
}

void Service::install_routes() {
    httplib::Server& s = *server_;

    s.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
        std::string bytes;
        if (req.has_file("image")) {
            bytes = req.get_file_value("image").content;
        } else {
            bytes = req.body;
        }
        auto record = std::make_shared<SessionRecord>();
        try {
            record->source = decode_png(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
        } catch (const Error& e) {
            return send_error(res, 400, e.what());
        }
        const std::size_t f = config_.drag.latent_downscale;
        if (record->source.height % f != 0 || record->source.width % f != 0) {
            return send_error(res, 422, "image size must be divisible by the latent downscale factor " +
                                            std::to_string(f));
        }
        std::lock_guard lock(mutex_);
        record->id = make_id(salt_, ++counter_);
        sessions_[record->id] = record;
        send_json(res, 201,
                  {{"id", record->id}, {"width", record->source.width}, {"height", record->source.height}});
    });

    s.Post("/sessions/:id/pairs", [this](const httplib::Request& req, httplib::Response& res) {
        auto record = find(req.path_params.at("id"));
        if (!record) return send_error(res, 404, "unknown session");
        std::vector<PointPair> pairs;
        try {
            pairs = parse_points(req.body, record->source.dims());
        } catch (const Error& e) {
            return send_error(res, 422, e.what());
        }
        std::lock_guard lock(mutex_);
        if (record->status != SessionStatus::Idle) {
            return send_error(res, 409, "pairs can only change while the session is idle");
        }
        record->pairs = std::move(pairs);
        send_json(res, 200, {{"id", record->id}, {"pairs", json::parse(points_to_json(record->pairs))}});
    });

    s.Get("/sessions/:id/mask", [this](const httplib::Request& req, httplib::Response& res) {
        auto record = find(req.path_params.at("id"));
        if (!record) return send_error(res, 404, "unknown session");
        std::vector<PointPair> pairs;
        Dims dims;
        {
            std::lock_guard lock(mutex_);
            pairs = record->pairs;
            dims = record->source.dims();
        }
        if (pairs.empty()) return send_error(res, 409, "session has no pairs");
        try {
            send_png(res, encode_gray_png(generate_soft_mask(pairs, dims, config_.drag.mask_sigma).grid));
        } catch (const Error& e) {
            send_error(res, 422, e.what());
        }
    });

    s.Post("/sessions/:id/run", [this](const httplib::Request& req, httplib::Response& res) {
        auto record = find(req.path_params.at("id"));
        if (!record) return send_error(res, 404, "unknown session");
        std::uint64_t seed = 0;
        if (!req.body.empty()) {
            try {
                const json body = json::parse(req.body);
                if (body.contains("seed")) seed = body.at("seed").get<std::uint64_t>();
            } catch (const json::exception& e) {
                return send_error(res, 422, std::string("invalid run request: ") + e.what());
            }
        }
        std::lock_guard lock(mutex_);
        if (record->status == SessionStatus::Running) return send_error(res, 409, "session is already running");
        if (record->status != SessionStatus::Idle) return send_error(res, 409, "session has already run");
        if (record->pairs.empty()) return send_error(res, 409, "session has no pairs");
        record->status = SessionStatus::Running;
        workers_.emplace_back(&Service::run_session, this, record, record->pairs, seed);
        send_json(res, 202, {{"id", record->id}, {"status", to_string(record->status)}});
    });

    s.Get("/sessions/:id/status", [this](const httplib::Request& req, httplib::Response& res) {
        auto record = find(req.path_params.at("id"));
        if (!record) return send_error(res, 404, "unknown session");
        std::lock_guard lock(mutex_);
        json tail = json::array();
        const auto& its = record->iterations;
        for (std::size_t i = its.size() > kLossTail ? its.size() - kLossTail : 0; i < its.size(); ++i) {
            tail.push_back(iteration_json(its[i]));
        }
        json body = {{"id", record->id},
                     {"status", to_string(record->status)},
                     {"iterations", its.size()},
                     {"loss_tail", tail}};
        if (record->status == SessionStatus::Failed) body["error"] = record->error;
        if (record->status == SessionStatus::Done) body["report"] = json::parse(record->report_json);
        send_json(res, 200, body);
    });

    auto artifact = [this](std::vector<std::uint8_t> SessionRecord::*field) {
        return [this, field](const httplib::Request& req, httplib::Response& res) {
            auto record = find(req.path_params.at("id"));
            if (!record) return send_error(res, 404, "unknown session");
            std::lock_guard lock(mutex_);
            if (record->status != SessionStatus::Done) {
                return send_error(res, 409, "session is " + to_string(record->status) + ", no result yet");
            }
            send_png(res, (*record).*field);
        };
    };
    s.Get("/sessions/:id/result", artifact(&SessionRecord::edited_png));
    s.Get("/sessions/:id/result/mask", artifact(&SessionRecord::mask_png));
    s.Get("/sessions/:id/result/displacement", artifact(&SessionRecord::displacement_png));

    s.Get("/sessions/:id/report", [this](const httplib::Request& req, httplib::Response& res) {
        auto record = find(req.path_params.at("id"));
        if (!record) return send_error(res, 404, "unknown session");
        std::lock_guard lock(mutex_);
        if (record->status != SessionStatus::Done) return send_error(res, 409, "no report yet");
        res.status = 200;
        res.set_content(record->report_json, "application/json");
    });

    s.Delete("/sessions/:id", [this](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(mutex_);
        if (sessions_.erase(req.path_params.at("id")) == 0) return send_error(res, 404, "unknown session");
        res.status = 204;
    });
}

}  // namespace dragkit
