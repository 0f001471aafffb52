#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dragkit/config.hpp"

namespace httplib {
class Server;
}

namespace dragkit {

enum class SessionStatus { Idle, Running, Done, Failed };
std::string to_string(SessionStatus status);

struct SessionRecord {
    std::string id;
    Image source;
    std::vector<PointPair> pairs;
    SessionStatus status = SessionStatus::Idle;
    std::string error;
    std::vector<IterationRecord> iterations;  // grows while running
    std::vector<std::uint8_t> edited_png;
    std::vector<std::uint8_t> mask_png;
    std::vector<std::uint8_t> displacement_png;
    std::string report_json;
};

// Local HTTP API over drag-edit sessions. Each run gets its own worker thread;
// the registry is guarded by one mutex.
class Service {
public:
    explicit Service(EngineConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Binds without serving; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    void listen();  // blocks until stop()
    void start();   // listen() on a background thread
    void stop();
    void wait_for_workers();

    httplib::Server& http() { return *server_; }

private:
    void install_routes();
    std::shared_ptr<SessionRecord> find(const std::string& id);
    void run_session(std::shared_ptr<SessionRecord> record, std::vector<PointPair> pairs, std::uint64_t seed);

    EngineConfig config_;
    std::unique_ptr<httplib::Server> server_;
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<SessionRecord>> sessions_;
    std::vector<std::thread> workers_;
    std::thread listener_;
    std::uint64_t counter_ = 0;
    std::uint64_t salt_ = 0;
};

}  // namespace dragkit
