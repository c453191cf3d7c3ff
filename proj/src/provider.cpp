#include "cadenza/provider.hpp"

#include "cadenza/errors.hpp"
#include "cadenza/metadata.hpp"
#include "cadenza/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

namespace cadenza::provider {

namespace {

// ---- bundled prompt templates ------------------------------------------

constexpr const char* kDetailedCaption = R"(You are an expert musicologist writing a detailed, layered caption for a 30-second music segment.

Ground every claim in the structured metadata and the initial caption below; do not contradict them. Cover, in flowing prose:
a) low-level information: tempo and BPM, key, and meter;
b) instrumentation and production;
c) lyrics and lyrical themes, with structural placement (verses, choruses, bridges) where audible;
d) song structure and dynamics;
e) theoretical insight such as chord transitions and harmonic movement;
f) overall mood and cultural context.

Structured metadata:
{{metadata}}

Initial caption:
{{initial_caption}}

Write the caption as a single detailed paragraph.)";

constexpr const char* kQaGeneration = R"(You are writing one multiple-choice question about a music segment to train the skill: {{skill}}.

Use the structured metadata and caption below as ground truth. The question must require listening to the audio, not general knowledge. Provide exactly four options with one correct answer.

Structured metadata:
{{metadata}}

Caption:
{{caption}}

Respond with JSON only: {"question": ..., "options": [...], "answer_index": ...})";

constexpr const char* kCaptionCorrection = R"(Rewrite the caption below so that it is consistent with the structured metadata: correct any mislabeled tempo, key, or timbre, add lyrical themes and vocal attributes where the metadata provides them, and keep everything else intact.

The rewritten caption must state the BPM value {{bpm}} and the key {{key}} exactly as given.

Structured metadata:
{{metadata}}

Lyrics (may be empty):
{{lyrics}}

Original caption:
{{caption}}

Respond with the rewritten caption only.)";

constexpr const char* kOptionAugmentation = R"(The multiple-choice question below is too easy to guess from the option list alone. Add plausible distractor options that are close to the existing ones in style and topic, so the answer cannot be inferred without listening.

Question: {{question}}
Options: {{options}}
Correct answer: {{answer}}

Respond with JSON only: a list of new distractor strings, none of which equals the correct answer.)";

constexpr const char* kCotCaption = R"(Produce a step-by-step reasoning chain that derives the detailed caption below from musical evidence.

Requirements: reason in 5 to 10 short sentences; ground each step in music theory (tempo, key, harmony, structure, production); progress from surface attributes to higher-level interpretation; end by committing to the caption. Use the structured metadata as the source of facts.

Structured metadata:
{{metadata}}

Caption to derive:
{{caption}}

Respond with the reasoning sentences only.)";

constexpr const char* kCotQa = R"(Produce a step-by-step reasoning chain that answers the multiple-choice question below.

Requirements: reason in 5 to 10 short sentences; ground each step in music theory; eliminate wrong options explicitly; commit to one option at the end. Use the structured metadata as the source of facts.

Question: {{question}}
Options: {{options}}
Structured metadata:
{{metadata}}

Respond with the reasoning sentences only.)";

constexpr const char* kInitialCaption = R"(Listen to segment {{segment_id}} (offset {{offset_sec}} s) and write one short, surface-level caption describing the overall sound. One sentence, no speculation about lyrics or structure.)";

constexpr const char* kHardProbe = R"(Judge how challenging this question is for a music understanding model. Answer yes if answering it requires careful listening and reasoning, no if it is superficial.

Question: {{question}}
Options ({{option_count}} total): {{options}}

Answer yes or no only.)";

constexpr const char* kStepVerify = R"(Fact-check one reasoning step against the audio and metadata. Answer yes if the step is correct, no otherwise.

Metadata: {{metadata}}
Step: {{step}}

Answer yes or no only.)";

constexpr const char* kStepRewrite = R"(The reasoning step below was judged incorrect. Rewrite it so it is consistent with the metadata, keeping it one sentence.

Metadata: {{metadata}}
Incorrect step: {{step}}

Respond with the corrected sentence only.)";

constexpr const char* kTranscribe = R"(Transcribe the sung lyrics of segment {{segment_id}}. Respond with the raw transcript, or an empty line if there are no vocals.)";

constexpr const char* kQualityCheck = R"(Judge whether this training record is high quality: factually plausible, well formed, and useful for music understanding. Answer yes or no only.

Record: {{record}})";

const std::map<std::string, const char*>& template_map() {
    static const std::map<std::string, const char*> templates = {
        {"detailed_caption", kDetailedCaption},
        {"qa_generation", kQaGeneration},
        {"caption_correction", kCaptionCorrection},
        {"option_augmentation", kOptionAugmentation},
        {"cot_caption", kCotCaption},
        {"cot_qa", kCotQa},
        {"initial_caption", kInitialCaption},
        {"hard_probe", kHardProbe},
        {"step_verify", kStepVerify},
        {"step_rewrite", kStepRewrite},
        {"transcribe", kTranscribe},
        {"quality_check", kQualityCheck},
    };
    return templates;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string var_or(const ProviderRequest& req, const std::string& name, std::string fallback) {
    const auto it = req.variables.find(name);
    return it == req.variables.end() ? std::move(fallback) : it->second;
}

} // namespace

const char* role_name(Role role) {
    switch (role) {
        case Role::captioner: return "captioner";
        case Role::qa_generator: return "qa_generator";
        case Role::cot_generator: return "cot_generator";
        case Role::verifier: return "verifier";
        case Role::transcriber: return "transcriber";
    }
    return "captioner";
}

std::string idempotency_key(const ProviderRequest& req) {
    std::string canonical = std::string(role_name(req.role)) + "\x1f" + req.template_id;
    for (const auto& [k, v] : req.variables) canonical += "\x1f" + k + "\x1e" + v;
    if (req.audio_ref) canonical += "\x1f@" + *req.audio_ref;
    return meta::fnv1a64_hex(canonical);
}

const std::vector<std::string>& template_ids() {
    static const std::vector<std::string> ids = [] {
        std::vector<std::string> out;
        for (const auto& [id, text] : template_map()) out.push_back(id);
        return out;
    }();
    return ids;
}

std::string render_template(const std::string& template_id,
                            const std::map<std::string, std::string>& variables) {
    const auto& templates = template_map();
    const auto it = templates.find(template_id);
    if (it == templates.end()) throw TemplateError("unknown template id '" + template_id + "'");

    std::string text = it->second;
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t open = text.find("{{", pos);
        if (open == std::string::npos) {
            out += text.substr(pos);
            break;
        }
        const std::size_t close = text.find("}}", open);
        if (close == std::string::npos) throw TemplateError("unterminated placeholder");
        out += text.substr(pos, open - pos);
        const std::string name = text.substr(open + 2, close - open - 2);
        const auto var = variables.find(name);
        if (var == variables.end())
            throw TemplateError("missing template variable '" + name + "'");
        out += var->second;
        pos = close + 2;
    }
    return out;
}

std::optional<Verdict> parse_verdict(const std::string& text) {
    std::string t = lower(text);
    const std::size_t start = t.find_first_not_of(" \t\r\n");
    if (start == std::string::npos) return std::nullopt;
    std::size_t end = start;
    while (end < t.size() && std::isalpha(static_cast<unsigned char>(t[end]))) ++end;
    const std::string word = t.substr(start, end - start);
    if (word == "yes") return Verdict::yes;
    if (word == "no") return Verdict::no;
    return std::nullopt;
}

// ---- MockProvider ---------------------------------------------------------

ProviderResponse MockProvider::send(const ProviderRequest& req) {
    ++calls_;
    const std::string prompt = render_template(req.template_id, req.variables);
    Rng rng(Rng::mix(config_.seed, meta::fnv1a64(idempotency_key(req))));

    ProviderResponse resp;
    if (config_.override_fn) {
        if (auto text = config_.override_fn(req)) {
            resp.text = std::move(*text);
            if (req.role == Role::verifier) {
                resp.verdict = parse_verdict(resp.text);
                if (!resp.verdict)
                    throw MalformedVerdict("mock verifier returned '" + resp.text + "'");
            }
            return resp;
        }
    }

    switch (req.role) {
        case Role::verifier: {
            bool yes = true;
            if (!config_.approve_token.empty())
                yes = prompt.find(config_.approve_token) != std::string::npos;
            if (!config_.reject_token.empty() &&
                prompt.find(config_.reject_token) != std::string::npos)
                yes = false;
            resp.text = yes ? "yes" : "no";
            resp.verdict = yes ? Verdict::yes : Verdict::no;
            break;
        }
        case Role::captioner: {
            static const char* kMoods[] = {"buoyant", "wistful", "driving", "hazy", "stately"};
            const char* mood = kMoods[rng.uniform_int(0, 4)];
            if (req.template_id == "initial_caption") {
                resp.text = std::string("A ") + mood + " musical passage with a steady pulse.";
            } else if (req.template_id == "caption_correction") {
                std::string text = "This " + std::string(mood) + " track sits around " +
                                   var_or(req, "bpm", "unknown") + " BPM in " +
                                   var_or(req, "key", "an unstated key") + ".";
                const std::string themes = var_or(req, "lyric_themes", "");
                if (!themes.empty()) text += " The lyrics dwell on " + themes + ".";
                const std::string vocals = var_or(req, "vocal_character", "");
                if (!vocals.empty()) text += " Vocals: " + vocals + ".";
                resp.text = std::move(text);
            } else {
                // detailed caption: echo the metadata block so every
                // metadata-sourced value appears in the text
                resp.text = "A " + std::string(mood) + " segment. " +
                            var_or(req, "metadata", "") + " " +
                            var_or(req, "initial_caption", "");
            }
            break;
        }
        case Role::qa_generator: {
            if (req.template_id == "option_augmentation") {
                static const char* kDistractors[] = {
                    "A field recording with incidental sound", "An unaccompanied choral passage",
                    "A solo percussion exercise",              "A spoken announcement over silence",
                    "An ambient drone with no pulse",          "A marching band warming up",
                    "A film dialogue scene",                   "A synthesized test tone sequence",
                    "A live crowd recording",                  "An a cappella folk refrain"};
                nlohmann::json arr = nlohmann::json::array();
                std::vector<int> order(10);
                for (int i = 0; i < 10; ++i) order[static_cast<std::size_t>(i)] = i;
                for (int i = 9; i > 0; --i)
                    std::swap(order[static_cast<std::size_t>(i)],
                              order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
                for (int i = 0; i < 8; ++i) arr.push_back(kDistractors[order[static_cast<std::size_t>(i)]]);
                resp.text = arr.dump();
            } else {
                const std::string skill = var_or(req, "skill", "Attribute identification");
                nlohmann::json j;
                j["question"] = "Which statement about this segment is supported by the audio? (" +
                                skill + ")";
                j["options"] = {"It matches the extracted metadata", "It is pure silence",
                                "It is a spoken-word recording", "It contains no rhythmic content"};
                j["answer_index"] = 0;
                resp.text = j.dump();
            }
            break;
        }
        case Role::cot_generator: {
            if (req.template_id == "step_rewrite") {
                resp.text = "Corrected: this step now follows the metadata: " +
                            var_or(req, "metadata", "") + ".";
                break;
            }
            const int n_steps = 5 + static_cast<int>(rng.uniform_int(0, 3));
            static const char* kOpeners[] = {"First", "Next", "Then", "Further", "Finally"};
            std::string text;
            for (int i = 0; i < n_steps; ++i) {
                const char* opener = kOpeners[std::min(i, 4)];
                text += std::string(opener) + ", step " + std::to_string(i + 1) +
                        " grounds the analysis in the metadata (" +
                        var_or(req, "metadata", "") + "). ";
            }
            resp.text = std::move(text);
            break;
        }
        case Role::transcriber: {
            const int n = 3 + static_cast<int>(rng.uniform_int(0, 4));
            std::string text;
            for (int i = 0; i < n; ++i) text += i ? " la" : "la";
            resp.text = std::move(text);
            break;
        }
    }
    return resp;
}

ProviderResponse FlakyProvider::send(const ProviderRequest& req) {
    if (remaining_ > 0) {
        --remaining_;
        throw ProviderUnavailable("simulated outage");
    }
    return inner_->send(req);
}

// ---- CachingProvider --------------------------------------------------

CachingProvider::CachingProvider(std::shared_ptr<Provider> inner, std::string cache_dir,
                                 int max_in_flight)
    : inner_(std::move(inner)),
      cache_dir_(std::move(cache_dir)),
      max_in_flight_(std::max(1, max_in_flight)) {
    if (!cache_dir_.empty()) std::filesystem::create_directories(cache_dir_);
}

ProviderResponse CachingProvider::send(const ProviderRequest& req) {
    const std::string key = idempotency_key(req);
    {
        std::lock_guard lock(mutex_);
        const auto it = memory_.find(key);
        if (it != memory_.end()) {
            ++hits_;
            return it->second;
        }
        if (!cache_dir_.empty()) {
            const auto path = std::filesystem::path(cache_dir_) / (key + ".json");
            std::ifstream in(path, std::ios::binary);
            if (in) {
                nlohmann::json j;
                in >> j;
                ProviderResponse resp;
                resp.text = j.at("text").get<std::string>();
                if (j.contains("verdict"))
                    resp.verdict = j["verdict"].get<bool>() ? Verdict::yes : Verdict::no;
                memory_[key] = resp;
                ++hits_;
                return resp;
            }
        }
    }

    // bounded in-flight window toward the backing provider
    {
        std::unique_lock lock(mutex_);
        slot_free_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
        ++in_flight_;
    }
    ProviderResponse resp;
    try {
        resp = inner_->send(req);
    } catch (...) {
        {
            std::lock_guard lock(mutex_);
            --in_flight_;
        }
        slot_free_.notify_one();
        throw;
    }
    {
        std::lock_guard lock(mutex_);
        --in_flight_;
    }
    slot_free_.notify_one();
    {
        std::lock_guard lock(mutex_);
        ++misses_;
        memory_[key] = resp;
        if (!cache_dir_.empty()) {
            nlohmann::json j;
            j["text"] = resp.text;
            if (resp.verdict) j["verdict"] = *resp.verdict == Verdict::yes;
            const auto path = std::filesystem::path(cache_dir_) / (key + ".json");
            std::ofstream out(path, std::ios::binary);
            out << j.dump() << '\n';
        }
    }
    return resp;
}

// ---- HttpProvider -----------------------------------------------------

namespace {

std::string base64_encode(const std::string& bytes) {
    static const char* alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < bytes.size()) {
        const std::uint32_t n = (static_cast<std::uint8_t>(bytes[i]) << 16) |
                                (static_cast<std::uint8_t>(bytes[i + 1]) << 8) |
                                static_cast<std::uint8_t>(bytes[i + 2]);
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += alphabet[(n >> 6) & 63];
        out += alphabet[n & 63];
        i += 3;
    }
    if (i + 1 == bytes.size()) {
        const std::uint32_t n = static_cast<std::uint8_t>(bytes[i]) << 16;
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const std::uint32_t n = (static_cast<std::uint8_t>(bytes[i]) << 16) |
                                (static_cast<std::uint8_t>(bytes[i + 1]) << 8);
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += alphabet[(n >> 6) & 63];
        out += '=';
    }
    return out;
}

struct ParsedUrl {
    std::string host;
    int port = 80;
    std::string path = "/";
};

ParsedUrl parse_url(const std::string& url) {
    ParsedUrl out;
    std::string rest = url;
    const std::string scheme = "http://";
    if (rest.rfind(scheme, 0) != 0)
        throw InvalidArgument("provider url must start with http:// (got '" + url + "')");
    rest = rest.substr(scheme.size());
    const std::size_t slash = rest.find('/');
    std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
    if (slash != std::string::npos) out.path = rest.substr(slash);
    const std::size_t colon = hostport.find(':');
    if (colon == std::string::npos) {
        out.host = hostport;
    } else {
        out.host = hostport.substr(0, colon);
        out.port = std::stoi(hostport.substr(colon + 1));
    }
    return out;
}

} // namespace

} // namespace cadenza::provider

// httplib pulls in a lot; keep it out of the header
#include <httplib.h>

namespace cadenza::provider {

ProviderResponse HttpProvider::send(const ProviderRequest& req) {
    const ParsedUrl url = parse_url(config_.url);
    const std::string prompt = render_template(req.template_id, req.variables);

    nlohmann::json body;
    body["role"] = role_name(req.role);
    body["prompt"] = prompt;
    if (req.audio_ref) {
        std::ifstream in(*req.audio_ref, std::ios::binary);
        if (in) {
            std::string bytes((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
            body["audio"] = base64_encode(bytes);
        }
    }
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
        if (attempt > 0) {
            const double delay =
                config_.backoff_base_sec * std::pow(config_.backoff_factor, attempt - 1);
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
        const auto start = std::chrono::steady_clock::now();
        httplib::Client client(url.host, url.port);
        client.set_connection_timeout(10);
        client.set_read_timeout(120);
        if (!config_.auth_token_env.empty()) {
            if (const char* token = std::getenv(config_.auth_token_env.c_str()))
                client.set_default_headers({{"Authorization", std::string("Bearer ") + token}});
        }
        auto res = client.Post(url.path, payload, "application/json");
        if (!res) {
            last_error = "connection failed (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            last_error = "http status " + std::to_string(res->status);
            continue;
        }
        const auto parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("text")) {
            last_error = "response body is not {\"text\": ...}";
            continue;
        }
        ProviderResponse resp;
        resp.text = parsed["text"].get<std::string>();
        resp.latency_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - start)
                              .count();
        if (req.role == Role::verifier) {
            resp.verdict = parse_verdict(resp.text);
            if (!resp.verdict)
                throw MalformedVerdict("verifier returned unparseable verdict: '" + resp.text + "'");
        }
        return resp;
    }
    throw ProviderUnavailable("exhausted " + std::to_string(config_.max_attempts) +
                              " attempts against " + config_.url + ": " + last_error);
}

} // namespace cadenza::provider
