#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cadenza::provider {

enum class Role { captioner, qa_generator, cot_generator, verifier, transcriber };

const char* role_name(Role role);

struct ProviderRequest {
    Role role = Role::captioner;
    std::string template_id;
    std::map<std::string, std::string> variables;
    std::optional<std::string> audio_ref;
};

/// Hash of (role, template, variables, audio_ref); requests with equal keys
/// are interchangeable and cacheable.
std::string idempotency_key(const ProviderRequest& req);

enum class Verdict { yes, no };

struct ProviderResponse {
    std::string text;
    std::optional<Verdict> verdict;  // parsed for verifier requests
    double latency_ms = 0.0;
};

/// Registered template ids. The six dataset-construction prompts plus the
/// small operational ones (initial captions, difficulty probe, step
/// verification/rewrite, transcription).
const std::vector<std::string>& template_ids();

/// Verbatim template with {{placeholder}} substitution. Missing variables and
/// unknown ids raise TemplateError naming the offender.
std::string render_template(const std::string& template_id,
                            const std::map<std::string, std::string>& variables);

class Provider {
public:
    virtual ~Provider() = default;
    virtual ProviderResponse send(const ProviderRequest& req) = 0;
};

// ---- deterministic mock ---------------------------------------------------

struct MockConfig {
    std::uint64_t seed = 7;
    /// Verifier rule: when set, verdict is yes iff the rendered prompt
    /// contains this token.
    std::string approve_token;
    /// Verifier rule: when set, verdict is no iff the rendered prompt
    /// contains this token (checked after approve_token).
    std::string reject_token;
    /// Test hook: a pure function that may take over any request.
    std::function<std::optional<std::string>(const ProviderRequest&)> override_fn;
};

/// Rule-driven stand-in for the hosted models: a pure function of
/// (seed, request), so pipelines running against it are reproducible.
class MockProvider : public Provider {
public:
    explicit MockProvider(MockConfig config = {}) : config_(std::move(config)) {}
    ProviderResponse send(const ProviderRequest& req) override;

    int call_count() const { return calls_; }

private:
    MockConfig config_;
    int calls_ = 0;
};

/// Mock wrapper that fails the first `failures` sends with
/// ProviderUnavailable; used by resume tests.
class FlakyProvider : public Provider {
public:
    FlakyProvider(std::shared_ptr<Provider> inner, int failures)
        : inner_(std::move(inner)), remaining_(failures) {}
    ProviderResponse send(const ProviderRequest& req) override;

private:
    std::shared_ptr<Provider> inner_;
    int remaining_;
};

// ---- HTTP -------------------------------------------------------------

/// POST {role, prompt, audio?(base64)} as JSON, expect {"text": ...} back.
struct HttpConfig {
    std::string url;             // http://host:port/path
    std::string auth_token_env;  // env var holding a bearer token (optional)
    double backoff_base_sec = 1.0;
    double backoff_factor = 2.0;
    int max_attempts = 5;
};

class HttpProvider : public Provider {
public:
    explicit HttpProvider(HttpConfig config) : config_(std::move(config)) {}
    ProviderResponse send(const ProviderRequest& req) override;

private:
    HttpConfig config_;
};

// ---- response cache ---------------------------------------------------

/// Thread-safe idempotency cache in front of any provider. With `cache_dir`
/// set, responses also persist on disk keyed by idempotency_key, which is
/// what makes interrupted pipeline runs resumable without duplicate calls.
/// At most `max_in_flight` requests reach the inner provider concurrently.
class CachingProvider : public Provider {
public:
    explicit CachingProvider(std::shared_ptr<Provider> inner, std::string cache_dir = {},
                             int max_in_flight = 4);
    ProviderResponse send(const ProviderRequest& req) override;

    std::uint64_t hits() const { return hits_; }
    std::uint64_t misses() const { return misses_; }

private:
    std::shared_ptr<Provider> inner_;
    std::string cache_dir_;
    std::mutex mutex_;
    std::condition_variable slot_free_;
    int in_flight_ = 0;
    int max_in_flight_ = 4;
    std::unordered_map<std::string, ProviderResponse> memory_;
    std::uint64_t hits_ = 0;
    std::uint64_t misses_ = 0;
};

std::optional<Verdict> parse_verdict(const std::string& text);

} // namespace cadenza::provider
