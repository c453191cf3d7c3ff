#include "cadenza/rewards.hpp"

#include "cadenza/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_set>

namespace cadenza::rewards {

namespace {

constexpr const char* kThinkOpen = "<think>";
constexpr const char* kThinkClose = "</think>";
constexpr const char* kAnswerOpen = "<answer>";
constexpr const char* kAnswerClose = "</answer>";

std::size_t count_occurrences(const std::string& s, const std::string& needle) {
    std::size_t count = 0;
    for (std::size_t pos = s.find(needle); pos != std::string::npos;
         pos = s.find(needle, pos + 1))
        ++count;
    return count;
}

std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool whitespace_only(const std::string& s) {
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

struct ParsedTags {
    std::string think_body;
    std::string answer_body;
};

/// Single forward parse of the strict tag grammar; nullopt when it fails.
std::optional<ParsedTags> parse_tags(const std::string& output) {
    const std::string s = trim(output);
    if (count_occurrences(s, kThinkOpen) != 1 || count_occurrences(s, kThinkClose) != 1 ||
        count_occurrences(s, kAnswerOpen) != 1 || count_occurrences(s, kAnswerClose) != 1)
        return std::nullopt;

    if (s.rfind(kThinkOpen, 0) != 0) return std::nullopt;
    const std::size_t think_close = s.find(kThinkClose);
    const std::size_t think_body_start = std::string(kThinkOpen).size();
    if (think_close < think_body_start) return std::nullopt;
    const std::string think_body = s.substr(think_body_start, think_close - think_body_start);
    if (think_body.empty()) return std::nullopt;

    std::size_t pos = think_close + std::string(kThinkClose).size();
    const std::size_t answer_open = s.find(kAnswerOpen, pos);
    if (answer_open == std::string::npos) return std::nullopt;
    if (!whitespace_only(s.substr(pos, answer_open - pos))) return std::nullopt;

    const std::size_t answer_body_start = answer_open + std::string(kAnswerOpen).size();
    const std::size_t answer_close = s.find(kAnswerClose, answer_body_start);
    if (answer_close == std::string::npos) return std::nullopt;
    const std::string answer_body = s.substr(answer_body_start, answer_close - answer_body_start);
    if (answer_body.empty()) return std::nullopt;

    if (answer_close + std::string(kAnswerClose).size() != s.size()) return std::nullopt;
    return ParsedTags{think_body, answer_body};
}

// articles, conjunctions, and the most frequent function words; pinned
const std::vector<std::string> kStopWords = {
    "a",  "an",  "the", "and", "or",  "but",  "nor", "so",  "yet",  "for",
    "of", "in",  "on",  "at",  "to",  "with", "by",  "from", "as",  "is",
    "are", "was", "were", "be", "been", "it",  "its", "this", "that", "into"};

bool is_stop_word(const std::string& w) {
    static const std::unordered_set<std::string> set(kStopWords.begin(), kStopWords.end());
    return set.count(w) > 0;
}

std::string strip_token_punct(const std::string& token) {
    static const std::string punct = ".,;:!?()[]{}\"'";
    std::size_t a = 0;
    std::size_t b = token.size();
    while (a < b && punct.find(token[a]) != std::string::npos) ++a;
    while (b > a && punct.find(token[b - 1]) != std::string::npos) --b;
    return token.substr(a, b - a);
}

std::string ascii_lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string token;
    for (const char c : text + " ") {
        if (std::isspace(static_cast<unsigned char>(c)) || c == ',' || c == ';' || c == '/') {
            if (!token.empty()) {
                const std::string w = ascii_lower(strip_token_punct(token));
                if (!w.empty()) out.push_back(w);
                token.clear();
            }
        } else {
            token.push_back(c);
        }
    }
    return out;
}

} // namespace

int format_reward(const std::string& output) { return parse_tags(output) ? 1 : 0; }

std::string extract_answer(const std::string& output) {
    const auto parsed = parse_tags(output);
    if (!parsed) throw ExtractionError("output does not match the required tag structure");
    return parsed->answer_body;
}

std::string normalize_answer(const std::string& text) {
    std::string lowered = ascii_lower(text);
    // collapse whitespace runs, trim
    std::string collapsed;
    bool pending_space = false;
    for (const char c : lowered) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !collapsed.empty();
        } else {
            if (pending_space) collapsed.push_back(' ');
            pending_space = false;
            collapsed.push_back(c);
        }
    }
    // strip terminal punctuation
    static const std::string terminal = ".,!?;:";
    while (!collapsed.empty() && terminal.find(collapsed.back()) != std::string::npos)
        collapsed.pop_back();
    while (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();
    return collapsed;
}

int accuracy_reward(const std::string& predicted, const std::string& gold) {
    const std::string p = normalize_answer(predicted);
    const std::string g = normalize_answer(gold);
    if (p == g && !p.empty()) return 1;
    // MCQ-letter rule: gold "(x) ..." accepts the bare letter
    if (g.size() >= 3 && g[0] == '(' && g[2] == ')' &&
        std::isalpha(static_cast<unsigned char>(g[1]))) {
        if (p.size() == 1 && p[0] == g[1]) return 1;
    }
    return 0;
}

const std::vector<std::string>& stop_words() { return kStopWords; }

std::vector<std::string> content_words(const std::string& value) {
    std::vector<std::string> out;
    for (const auto& w : tokenize(value))
        if (!is_stop_word(w)) out.push_back(w);
    return out;
}

double structured_thinking_reward(const std::string& caption,
                                  const meta::MusicMetadata& metadata) {
    const auto categories = metadata.populated_categories();
    if (categories.empty())
        throw InvalidArgument("structured reward requires >= 1 populated metadata category");

    const auto caption_tokens = tokenize(caption);
    const std::unordered_set<std::string> caption_words(caption_tokens.begin(),
                                                        caption_tokens.end());

    double sum = 0.0;
    int counted = 0;
    for (const auto& [name, value] : categories) {
        const auto words = content_words(value);
        if (words.empty()) continue;  // nothing matchable; excluded from the average
        int matched = 0;
        for (const auto& w : words)
            if (caption_words.count(w)) ++matched;
        sum += std::clamp(static_cast<double>(matched) / static_cast<double>(words.size()), 0.0, 1.0);
        ++counted;
    }
    if (counted == 0) return 0.0;
    return sum / static_cast<double>(counted);
}

RewardBreakdown total_reward(const std::string& output, const Task& task) {
    RewardBreakdown out;
    out.format = format_reward(output);
    if (out.format == 1) {
        const std::string answer = extract_answer(output);
        if (const auto* qa = std::get_if<QaTask>(&task)) {
            out.accuracy = accuracy_reward(answer, qa->gold);
        } else {
            const auto& caption = std::get<CaptionTask>(task);
            out.structured = structured_thinking_reward(answer, caption.metadata);
        }
    } else if (std::holds_alternative<QaTask>(task)) {
        out.accuracy = 0;
    } else {
        out.structured = 0.0;
    }
    out.total = out.format + (out.accuracy ? static_cast<double>(*out.accuracy) : 0.0) +
                (out.structured ? *out.structured : 0.0);
    return out;
}

} // namespace cadenza::rewards
