#include "droplet/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <stdexcept>

namespace droplet {

namespace {

class BadRequest : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

double parse_number(const std::string& key, const std::string& text)
{
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
        throw BadRequest("query parameter " + key + " is not a number: '" + text + "'");
    }
    return v;
}

int parse_int(const std::string& key, const std::string& text)
{
    int v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
        throw BadRequest("query parameter " + key + " is not an integer: '" + text + "'");
    }
    return v;
}

bool parse_flag(const std::string& key, const std::string& text)
{
    if (text == "1" || text == "true") return true;
    if (text == "0" || text == "false") return false;
    throw BadRequest("query parameter " + key + " must be true/false/1/0");
}

ServiceResponse error_response(int status, std::string_view message)
{
    return {status, render_json(Json{{"error", std::string(message)}}), "application/json"};
}

std::optional<ImageFormat> format_from_content_type(std::string_view content_type)
{
    const auto semi = content_type.find(';');
    if (semi != std::string_view::npos) content_type = content_type.substr(0, semi);
    if (content_type == "image/png") return ImageFormat::Png;
    if (content_type == "image/tiff") return ImageFormat::Tiff;
    if (content_type == "application/x-droplet-raw") return ImageFormat::Raw;
    return std::nullopt;
}

// Releases an admission ticket on scope exit.
struct Admission {
    std::atomic<int>& counter;
    ~Admission() { --counter; }
};

}  // namespace

std::pair<std::string, int> parse_listen_address(std::string_view address)
{
    const auto colon = address.rfind(':');
    if (colon == std::string_view::npos) throw std::invalid_argument("listen address must be HOST:PORT");
    const auto port_text = address.substr(colon + 1);
    int port = -1;
    const auto res = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (res.ec != std::errc{} || res.ptr != port_text.data() + port_text.size() || port < 0 || port > 65535) {
        throw std::invalid_argument("invalid port in listen address '" + std::string(address) + "'");
    }
    std::string host(address.substr(0, colon));
    if (host.empty()) host = "0.0.0.0";
    return {host, port};
}

AnalysisService::AnalysisService(ServiceConfig config)
    : config_(std::move(config)),
      started_(std::chrono::steady_clock::now()),
      worker_slots_(std::clamp(config_.workers, 1, 1024))
{
    if (config_.workers < 1) throw std::invalid_argument("service needs at least one worker");
    if (config_.backlog < 0) throw std::invalid_argument("backlog must be >= 0");
    if (config_.detector_cache_size < 1) throw std::invalid_argument("detector cache needs capacity >= 1");
    config_.params.validate();
}

DetectionParams AnalysisService::resolve_params(const std::multimap<std::string, std::string>& query) const
{
    DetectionParams p = config_.params;
    for (const auto& [key, value] : query) {
        if (key == "name") continue;
        if (key == "min_sigma") p.min_sigma = parse_number(key, value);
        else if (key == "max_sigma") p.max_sigma = parse_number(key, value);
        else if (key == "n_bin") p.n_bin = parse_int(key, value);
        else if (key == "truncate") p.truncate = parse_number(key, value);
        else if (key == "threshold") p.threshold = parse_number(key, value);
        else if (key == "overlap") p.overlap = parse_number(key, value);
        else if (key == "neighborhood") p.neighborhood = parse_int(key, value);
        else if (key == "backend") {
            try {
                p.backend = parse_backend(value);
            } catch (const std::invalid_argument& e) {
                throw BadRequest(e.what());
            }
        }
        else if (key == "prune") p.prune = parse_flag(key, value);
        else if (key == "preprocess") p.preprocess.enabled = parse_flag(key, value);
        else if (key == "smooth_sigma") p.preprocess.smooth_sigma = parse_number(key, value);
        else if (key == "saturation") p.preprocess.saturation = parse_number(key, value);
        else throw BadRequest("unknown query parameter '" + key + "'");
    }
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw BadRequest(e.what());
    }
    if (p.max_sigma > config_.max_sigma_cap) throw BadRequest("max_sigma exceeds the service cap");
    if (p.n_bin > config_.max_n_bin) throw BadRequest("n_bin exceeds the service cap");
    return p;
}

std::shared_ptr<const Detector> AnalysisService::detector_for(const DetectionParams& params)
{
    std::promise<std::shared_ptr<const Detector>> promise;
    DetectorFuture future;
    bool builder = false;
    {
        std::lock_guard lock(cache_mutex_);
        auto it = std::find_if(cache_.begin(), cache_.end(), [&](const auto& e) { return e.first == params; });
        if (it != cache_.end()) {
            cache_.splice(cache_.begin(), cache_, it);
            future = it->second;
        } else {
            future = promise.get_future().share();
            cache_.emplace_front(params, future);
            builder = true;
            while (cache_.size() > config_.detector_cache_size) cache_.pop_back();
        }
    }
    if (builder) {
        try {
            promise.set_value(std::make_shared<const Detector>(params));
            ++detectors_built_;
        } catch (...) {
            promise.set_exception(std::current_exception());
            std::lock_guard lock(cache_mutex_);
            std::erase_if(cache_, [&](const auto& e) { return e.first == params; });
        }
    }
    return future.get();
}

ServiceResponse AnalysisService::handle_detect(std::span<const std::byte> body, std::string_view content_type,
                                               const std::multimap<std::string, std::string>& query)
{
    if (body.size() > config_.max_request_bytes) return error_response(413, "request body too large");

    if (++admitted_ > config_.workers + config_.backlog) {
        --admitted_;
        return error_response(503, "detection queue full");
    }
    Admission ticket{admitted_};

    DetectionParams params;
    std::string name = "request";
    try {
        params = resolve_params(query);
        if (auto it = query.find("name"); it != query.end()) name = it->second;
    } catch (const BadRequest& e) {
        return error_response(400, e.what());
    }

    if (!worker_slots_.try_acquire_for(std::chrono::milliseconds(config_.request_timeout_ms))) {
        return error_response(503, "no detection worker became available in time");
    }
    struct SlotRelease {
        std::counting_semaphore<1024>& slots;
        ~SlotRelease() { slots.release(); }
    } slot{worker_slots_};

    Image img;
    try {
        img = decode_image(body, format_from_content_type(content_type));
        require_finite(img);
    } catch (const std::exception& e) {
        return error_response(400, std::string("cannot decode image: ") + e.what());
    }

    try {
        const auto detector = detector_for(params);
        const auto result = detector->detect(img);
        ++requests_served_;
        return {200, render_json(detection_to_json(result, name, true)), "application/json"};
    } catch (const std::length_error& e) {
        return error_response(413, e.what());
    } catch (const std::invalid_argument& e) {
        return error_response(400, e.what());
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

Json AnalysisService::health() const
{
    const double uptime =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    return Json{{"status", "ok"},
                {"params", params_to_json(config_.params)},
                {"uptime_s", uptime},
                {"requests", requests_served_.load()},
                {"in_flight", admitted_.load()},
                {"workers", config_.workers}};
}

ServiceResponse AnalysisService::handle_health() const
{
    return {200, render_json(health()), "application/json"};
}

HttpService::HttpService(ServiceConfig config)
    : service_(std::move(config)), server_(std::make_unique<httplib::Server>())
{
    const auto& cfg = service_.config();
    // Connection threads outnumber admitted detections so /healthz always
    // finds a free thread.
    const auto threads = static_cast<std::size_t>(cfg.workers + cfg.backlog + 4);
    server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server_->set_payload_max_length(cfg.max_request_bytes);
    const auto timeout_s = std::max(1, cfg.request_timeout_ms / 1000);
    server_->set_read_timeout(timeout_s, 0);
    server_->set_write_timeout(timeout_s, 0);

    server_->Post("/detect", [this](const httplib::Request& req, httplib::Response& res) {
        std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
        const auto* data = reinterpret_cast<const std::byte*>(req.body.data());
        const auto out = service_.handle_detect(std::span<const std::byte>(data, req.body.size()),
                                                req.get_header_value("Content-Type"), query);
        res.status = out.status;
        res.set_content(out.body, out.content_type);
    });
    server_->Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
        const auto out = service_.handle_health();
        res.status = out.status;
        res.set_content(out.body, out.content_type);
    });
}

HttpService::~HttpService()
{
    stop();
}

int HttpService::bind()
{
    const auto& cfg = service_.config();
    int port = cfg.port;
    if (port == 0) {
        port = server_->bind_to_any_port(cfg.host);
    } else if (!server_->bind_to_port(cfg.host, port)) {
        port = -1;
    }
    if (port < 0) throw std::runtime_error("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    return port;
}

void HttpService::serve()
{
    server_->listen_after_bind();
}

void HttpService::stop()
{
    if (server_) server_->stop();
}

}  // namespace droplet
