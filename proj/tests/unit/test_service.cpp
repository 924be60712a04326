#include "droplet/service.hpp"
#include "droplet/synth.hpp"

#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <thread>

using namespace droplet;

namespace {

using Query = std::multimap<std::string, std::string>;

std::vector<std::byte> scene_png(int size, std::uint64_t seed, int n = 10)
{
    RenderOptions opts;
    opts.width = opts.height = size;
    opts.n_spheres = n;
    opts.r_min = 3.0;
    opts.r_max = std::min(20.0, size / 8.0);
    opts.seed = seed;
    return encode_png16(add_noise(render_scene(opts), NoiseParams{}, seed).image);
}

Json without_timing(Json doc)
{
    doc.erase("timing");
    return doc;
}

ServiceConfig small_config()
{
    ServiceConfig cfg;
    cfg.port = 0;
    return cfg;
}

// Runs `slow` on a thread and waits until the service reports it in flight.
template <typename F>
std::thread start_and_wait_in_flight(AnalysisService& svc, F slow)
{
    std::thread t(slow);
    for (int i = 0; i < 20000 && svc.health()["in_flight"].get<int>() == 0; ++i) {
        std::this_thread::sleep_for(std::chrono::microseconds(100));
    }
    return t;
}

}  // namespace

TEST_CASE("blank frame returns an empty result")
{
    AnalysisService svc(small_config());
    const auto bytes = encode_png16(Image(100, 100, 0.0f));
    const auto res = svc.handle_detect(bytes, "image/png", {});
    REQUIRE(res.status == 200);
    const auto doc = Json::parse(res.body);
    CHECK(doc["blobs"].empty());
    CHECK(doc["width"] == 100);
    CHECK(doc["image"] == "request");
    CHECK(doc.contains("timing"));
    CHECK(res.body.back() == '\n');
}

TEST_CASE("health tracks served requests")
{
    AnalysisService svc(small_config());
    auto h = svc.health();
    CHECK(h["status"] == "ok");
    CHECK(h["requests"] == 0);
    CHECK(h["in_flight"] == 0);
    CHECK(h["params"]["n_bin"] == 24);
    CHECK(svc.handle_detect(encode_png16(Image(64, 64, 0.0f)), "", {}).status == 200);
    h = svc.health();
    CHECK(h["requests"] == 1);
    CHECK(h["in_flight"] == 0);
}

TEST_CASE("malformed requests get 400, oversize gets 413")
{
    ServiceConfig cfg = small_config();
    cfg.max_request_bytes = 4096;
    AnalysisService svc(cfg);
    const auto png = encode_png16(Image(16, 16, 0.0f));
    std::vector<std::byte> junk(100, std::byte{7});

    CHECK(svc.handle_detect(junk, "image/png", {}).status == 400);
    CHECK(svc.handle_detect(junk, "", {}).status == 400);
    CHECK(svc.handle_detect(png, "image/tiff", {}).status == 400);
    CHECK(svc.handle_detect(png, "", Query{{"bogus", "1"}}).status == 400);
    CHECK(svc.handle_detect(png, "", Query{{"n_bin", "x"}}).status == 400);
    CHECK(svc.handle_detect(png, "", Query{{"min_sigma", "5"}, {"max_sigma", "5"}}).status == 400);
    CHECK(svc.handle_detect(png, "", Query{{"neighborhood", "4"}}).status == 400);
    CHECK(svc.handle_detect(png, "", Query{{"backend", "gpu"}}).status == 400);
    CHECK(svc.handle_detect(png, "", Query{{"max_sigma", "1000"}}).status == 400);
    CHECK(svc.handle_detect(png, "", Query{{"prune", "maybe"}}).status == 400);

    const auto err = Json::parse(svc.handle_detect(junk, "", {}).body);
    CHECK(err.contains("error"));

    std::vector<std::byte> big(5000, std::byte{0});
    CHECK(svc.handle_detect(big, "image/png", {}).status == 413);
    CHECK(svc.health()["in_flight"] == 0);
}

TEST_CASE("oversized scale stacks are refused with 413")
{
    ServiceConfig cfg = small_config();
    cfg.max_sigma_cap = 1000.0;
    AnalysisService svc(cfg);
    const auto png = encode_png16(Image(16, 16, 0.0f));
    CHECK(svc.handle_detect(png, "", Query{{"max_sigma", "900"}}).status == 413);
}

TEST_CASE("query overrides and name")
{
    AnalysisService svc(small_config());
    const auto res = svc.handle_detect(scene_png(128, 2, 4), "image/png",
                                       Query{{"name", "f1"}, {"n_bin", "8"}, {"backend", "direct"}, {"prune", "0"}});
    REQUIRE(res.status == 200);
    const auto doc = Json::parse(res.body);
    CHECK(doc["image"] == "f1");
    CHECK(doc["params"]["n_bin"] == 8);
    CHECK(doc["params"]["backend"] == "direct");
    CHECK(doc["params"]["prune"] == false);
    CHECK(doc["histogram"]["counts"].size() == 9);
}

TEST_CASE("admission control rejects beyond workers + backlog")
{
    ServiceConfig cfg = small_config();
    cfg.workers = 1;
    cfg.backlog = 0;
    AnalysisService svc(cfg);
    const auto slow = scene_png(1000, 1, 60);
    std::atomic<int> first_status{0};
    auto t = start_and_wait_in_flight(svc, [&] { first_status = svc.handle_detect(slow, "", {}).status; });
    const bool busy = svc.health()["in_flight"] == 1;
    const auto second = svc.handle_detect(encode_png16(Image(16, 16, 0.0f)), "", {});
    t.join();
    REQUIRE(busy);
    CHECK(second.status == 503);
    CHECK(first_status == 200);
    CHECK(svc.handle_detect(encode_png16(Image(16, 16, 0.0f)), "", {}).status == 200);
}

TEST_CASE("queued requests time out waiting for a worker")
{
    ServiceConfig cfg = small_config();
    cfg.workers = 1;
    cfg.backlog = 1;
    cfg.request_timeout_ms = 20;
    AnalysisService svc(cfg);
    const auto slow = scene_png(1000, 1, 60);
    auto t = start_and_wait_in_flight(svc, [&] { (void)svc.handle_detect(slow, "", {}); });
    const auto second = svc.handle_detect(encode_png16(Image(16, 16, 0.0f)), "", {});
    t.join();
    CHECK(second.status == 503);
}

TEST_CASE("detector cache builds once per parameter set and evicts least recently used")
{
    ServiceConfig cfg = small_config();
    cfg.detector_cache_size = 2;
    AnalysisService svc(cfg);
    DetectionParams a, b, c;
    b.n_bin = 10;
    c.n_bin = 11;

    std::vector<std::shared_ptr<const Detector>> got(8);
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < got.size(); ++i) threads.emplace_back([&, i] { got[i] = svc.detector_for(a); });
    for (auto& t : threads) t.join();
    CHECK(svc.detectors_built() == 1);
    for (const auto& d : got) CHECK(d == got[0]);

    (void)svc.detector_for(b);
    (void)svc.detector_for(a);  // a becomes most recent
    (void)svc.detector_for(c);  // evicts b
    CHECK(svc.detectors_built() == 3);
    (void)svc.detector_for(a);
    CHECK(svc.detectors_built() == 3);
    (void)svc.detector_for(b);
    CHECK(svc.detectors_built() == 4);
}

TEST_CASE("service output equals offline detection apart from timing")
{
    AnalysisService svc(small_config());
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto png = scene_png(256, seed, 15);
        const auto online = Json::parse(svc.handle_detect(png, "image/png", Query{{"name", "s"}}).body);
        const auto offline = detection_to_json(detect(decode_image(png), DetectionParams{}), "s", false);
        CHECK(without_timing(online) == offline);
        CHECK(online["blobs"].size() >= 10);
    }
}

TEST_CASE("listen address parsing")
{
    CHECK(parse_listen_address("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
    CHECK(parse_listen_address(":9000").first == "0.0.0.0");
    CHECK_THROWS_AS(parse_listen_address("localhost"), std::invalid_argument);
    CHECK_THROWS_AS(parse_listen_address("h:99999"), std::invalid_argument);
    CHECK_THROWS_AS(parse_listen_address("h:abc"), std::invalid_argument);
}

TEST_CASE("HTTP endpoints, with health answering during a detection")
{
    HttpService http(small_config());
    const int port = http.bind();
    std::thread server([&] { http.serve(); });

    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(60, 0);
    auto health = client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(Json::parse(health->body)["status"] == "ok");

    const auto small = scene_png(128, 4, 5);
    auto res = client.Post("/detect?name=a", std::string(reinterpret_cast<const char*>(small.data()), small.size()),
                           "image/png");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(Json::parse(res->body)["image"] == "a");

    auto bad = client.Post("/detect", "not an image", "image/png");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(client.Get("/nope")->status == 404);

    const auto big = scene_png(1000, 9, 60);
    std::atomic<int> slow_status{0};
    std::thread slow([&] {
        httplib::Client c2("127.0.0.1", port);
        c2.set_read_timeout(60, 0);
        auto r = c2.Post("/detect", std::string(reinterpret_cast<const char*>(big.data()), big.size()), "image/png");
        slow_status = r ? r->status : -1;
    });
    bool saw_in_flight = false;
    double worst_ms = 0.0;
    for (int i = 0; i < 2000 && slow_status == 0; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        auto h = client.Get("/healthz");
        worst_ms = std::max(worst_ms, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        REQUIRE(h);
        if (Json::parse(h->body)["in_flight"] == 1) saw_in_flight = true;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    slow.join();
    CHECK(slow_status == 200);
    CHECK(saw_in_flight);
    MESSAGE("slowest /healthz during detection: " << worst_ms << " ms");

    http.stop();
    server.join();
}
