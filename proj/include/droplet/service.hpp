#pragma once

#include "droplet/detector.hpp"
#include "droplet/formats.hpp"

#include <atomic>
#include <chrono>
#include <cstddef>
#include <future>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace httplib {
class Server;
}

namespace droplet {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    DetectionParams params;
    /// A 16-bit 1000x1000 PNG is at most ~2 MB; raw float frames are ~4 MB.
    std::size_t max_request_bytes = std::size_t{16} << 20;
    int request_timeout_ms = 30000;
    int workers = 1;
    /// Requests admitted beyond the running ones; more are rejected with 503.
    int backlog = 8;
    std::size_t detector_cache_size = 4;
    /// Per-request override bounds.
    double max_sigma_cap = 64.0;
    int max_n_bin = 128;
};

/// Parses "HOST:PORT" (HOST may be empty for all interfaces).
std::pair<std::string, int> parse_listen_address(std::string_view address);

struct ServiceResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

/// Request handling independent of the HTTP transport.
class AnalysisService {
public:
    explicit AnalysisService(ServiceConfig config);

    const ServiceConfig& config() const noexcept { return config_; }

    /// Decodes the payload (format from content type, else sniffed), applies
    /// query overrides and runs detection. 400 malformed input, 413 oversize,
    /// 503 when the admission backlog is full or no worker frees up in time.
    ServiceResponse handle_detect(std::span<const std::byte> body, std::string_view content_type,
                                  const std::multimap<std::string, std::string>& query);

    /// Never waits on detection work.
    Json health() const;
    ServiceResponse handle_health() const;

    /// Cached detector for a parameter set; concurrent callers with the same
    /// parameters share one construction.
    std::shared_ptr<const Detector> detector_for(const DetectionParams& params);

    std::size_t detectors_built() const noexcept { return detectors_built_.load(); }
    std::size_t requests_served() const noexcept { return requests_served_.load(); }

    /// Applies query overrides on top of the configured defaults.
    DetectionParams resolve_params(const std::multimap<std::string, std::string>& query) const;

private:
    using DetectorFuture = std::shared_future<std::shared_ptr<const Detector>>;

    ServiceConfig config_;
    std::chrono::steady_clock::time_point started_;

    mutable std::mutex cache_mutex_;
    std::list<std::pair<DetectionParams, DetectorFuture>> cache_;  // most recent first

    std::atomic<int> admitted_{0};
    std::counting_semaphore<1024> worker_slots_;
    std::atomic<std::size_t> requests_served_{0};
    std::atomic<std::size_t> detectors_built_{0};
};

/// HTTP front end: POST /detect and GET /healthz.
class HttpService {
public:
    explicit HttpService(ServiceConfig config);
    ~HttpService();
    HttpService(const HttpService&) = delete;
    HttpService& operator=(const HttpService&) = delete;

    /// Binds the configured address; port 0 picks a free port. Returns the bound port.
    int bind();
    /// Serves until stop(); call after bind().
    void serve();
    void stop();

    AnalysisService& service() noexcept { return service_; }

private:
    AnalysisService service_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace droplet
