#include "cadenza/provider.hpp"

#include "cadenza/errors.hpp"

#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <thread>

using namespace cadenza;
using provider::ProviderRequest;
using provider::Role;
using provider::Verdict;

namespace {

ProviderRequest caption_request() {
    ProviderRequest req;
    req.role = Role::captioner;
    req.template_id = "detailed_caption";
    req.variables = {{"metadata", "{\"BPM\": 120, \"Key\": C major}"},
                     {"initial_caption", "a short caption"}};
    return req;
}

} // namespace

TEST_CASE("template rendering substitutes and validates") {
    const auto text = provider::render_template(
        "detailed_caption", {{"metadata", "METADATA-BLOCK"}, {"initial_caption", "INIT"}});
    CHECK(text.find("METADATA-BLOCK") != std::string::npos);
    CHECK(text.find("INIT") != std::string::npos);
    CHECK(text.find("{{") == std::string::npos);

    CHECK_THROWS_AS((void)provider::render_template("nope", {}), TemplateError);
    try {
        (void)provider::render_template("detailed_caption", {{"metadata", "x"}});
        FAIL("expected TemplateError");
    } catch (const TemplateError& e) {
        CHECK(std::string(e.what()).find("initial_caption") != std::string::npos);
    }
}

TEST_CASE("qa template names the requested skill") {
    const auto text = provider::render_template(
        "qa_generation",
        {{"skill", "Temporal understanding"}, {"metadata", "m"}, {"caption", "c"}});
    CHECK(text.find("Temporal understanding") != std::string::npos);
}

TEST_CASE("all bundled templates render with generic variables") {
    const std::map<std::string, std::string> everything = {
        {"metadata", "m"},     {"initial_caption", "i"}, {"caption", "c"},
        {"skill", "s"},        {"question", "q"},        {"options", "o"},
        {"answer", "a"},       {"lyrics", "l"},          {"bpm", "120"},
        {"key", "C major"},    {"segment_id", "seg0"},   {"offset_sec", "0"},
        {"option_count", "4"}, {"step", "st"},           {"record", "r"}};
    for (const auto& id : provider::template_ids())
        CHECK(!provider::render_template(id, everything).empty());
}

TEST_CASE("idempotency keys depend on every request part") {
    const auto base = caption_request();
    auto role_changed = base;
    role_changed.role = Role::verifier;
    auto var_changed = base;
    var_changed.variables["initial_caption"] = "different";
    auto audio_changed = base;
    audio_changed.audio_ref = "x.wav";

    const auto k = provider::idempotency_key(base);
    CHECK(k != provider::idempotency_key(role_changed));
    CHECK(k != provider::idempotency_key(var_changed));
    CHECK(k != provider::idempotency_key(audio_changed));
    CHECK(k == provider::idempotency_key(caption_request()));
}

TEST_CASE("mock provider is a pure function of seed and request") {
    provider::MockConfig cfg;
    cfg.seed = 7;
    provider::MockProvider a(cfg), b(cfg);
    const auto req = caption_request();
    CHECK(a.send(req).text == b.send(req).text);
    CHECK(a.send(req).text == a.send(req).text);

    provider::MockConfig other;
    other.seed = 8;
    provider::MockProvider c(other);
    // different seeds may pick different filler words; text still embeds metadata
    CHECK(c.send(req).text.find("120") != std::string::npos);
    CHECK(a.send(req).text.find("C major") != std::string::npos);
}

TEST_CASE("mock verifier: planted-token rules") {
    provider::MockConfig cfg;
    cfg.approve_token = "GOOD";
    provider::MockProvider mock(cfg);

    ProviderRequest req;
    req.role = Role::verifier;
    req.template_id = "quality_check";
    req.variables = {{"record", "this is a GOOD record"}};
    CHECK(mock.send(req).verdict == Verdict::yes);

    req.variables = {{"record", "this is a plain record"}};
    CHECK(mock.send(req).verdict == Verdict::no);

    provider::MockConfig rej;
    rej.reject_token = "BAD";
    provider::MockProvider reject_mock(rej);
    req.variables = {{"record", "fine text"}};
    CHECK(reject_mock.send(req).verdict == Verdict::yes);
    req.variables = {{"record", "BAD text"}};
    CHECK(reject_mock.send(req).verdict == Verdict::no);
}

TEST_CASE("mock override hook and malformed verdicts") {
    provider::MockConfig cfg;
    cfg.override_fn = [](const ProviderRequest& req) -> std::optional<std::string> {
        if (req.role == Role::verifier) return "maybe";
        return std::nullopt;
    };
    provider::MockProvider mock(cfg);
    ProviderRequest req;
    req.role = Role::verifier;
    req.template_id = "quality_check";
    req.variables = {{"record", "x"}};
    CHECK_THROWS_AS((void)mock.send(req), MalformedVerdict);
}

TEST_CASE("verdict parsing") {
    CHECK(provider::parse_verdict("yes") == Verdict::yes);
    CHECK(provider::parse_verdict("  Yes, it is.") == Verdict::yes);
    CHECK(provider::parse_verdict("NO") == Verdict::no);
    CHECK(!provider::parse_verdict("maybe"));
    CHECK(!provider::parse_verdict(""));
}

TEST_CASE("caching provider: identical requests hit the cache") {
    auto inner = std::make_shared<provider::MockProvider>();
    provider::CachingProvider cache(inner);
    const auto req = caption_request();
    const auto first = cache.send(req);
    for (int i = 0; i < 5; ++i) CHECK(cache.send(req).text == first.text);
    CHECK(cache.misses() == 1);
    CHECK(cache.hits() == 5);
    CHECK(inner->call_count() == 1);
}

TEST_CASE("caching provider: disk cache survives a new run") {
    const auto dir = std::filesystem::temp_directory_path() / "cadenza_cache_test";
    std::filesystem::remove_all(dir);
    const auto req = caption_request();

    std::string first_text;
    {
        auto inner = std::make_shared<provider::MockProvider>();
        provider::CachingProvider cache(inner, dir.string());
        first_text = cache.send(req).text;
        CHECK(cache.misses() == 1);
    }
    {
        auto inner = std::make_shared<provider::MockProvider>();
        provider::CachingProvider cache(inner, dir.string());
        CHECK(cache.send(req).text == first_text);
        CHECK(cache.hits() == 1);    // served from disk
        CHECK(cache.misses() == 0);  // 100% hit rate on the re-run
        CHECK(inner->call_count() == 0);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("flaky provider simulates outages") {
    auto inner = std::make_shared<provider::MockProvider>();
    provider::FlakyProvider flaky(inner, 2);
    const auto req = caption_request();
    CHECK_THROWS_AS((void)flaky.send(req), ProviderUnavailable);
    CHECK_THROWS_AS((void)flaky.send(req), ProviderUnavailable);
    CHECK(!flaky.send(req).text.empty());
}

TEST_CASE("http provider: endpoint down exhausts retries") {
    provider::HttpConfig cfg;
    cfg.url = "http://127.0.0.1:9";  // discard port: nothing listens
    cfg.backoff_base_sec = 0.001;    // keep the test fast
    cfg.max_attempts = 5;
    provider::HttpProvider http(cfg);
    try {
        (void)http.send(caption_request());
        FAIL("expected ProviderUnavailable");
    } catch (const ProviderUnavailable& e) {
        CHECK(std::string(e.what()).find("5 attempts") != std::string::npos);
    }
}

TEST_CASE("http provider: round trip against a local server") {
    httplib::Server server;
    std::atomic<int> seen{0};
    server.Post("/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
        ++seen;
        CHECK(req.body.find("\"role\"") != std::string::npos);
        CHECK(req.body.find("\"prompt\"") != std::string::npos);
        res.set_content("{\"text\": \"yes\"}", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread runner([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    provider::HttpConfig cfg;
    cfg.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/generate";
    cfg.backoff_base_sec = 0.001;
    provider::HttpProvider http(cfg);

    ProviderRequest req;
    req.role = Role::verifier;
    req.template_id = "quality_check";
    req.variables = {{"record", "x"}};
    const auto resp = http.send(req);
    CHECK(resp.text == "yes");
    CHECK(resp.verdict == Verdict::yes);
    CHECK(seen == 1);

    server.stop();
    runner.join();
}
