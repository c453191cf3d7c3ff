#pragma once

#include "cadenza/metadata.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace cadenza::rewards {

/// Components of one scored sample. `accuracy` is set for QA tasks,
/// `structured` for caption tasks; both are gated on format = 1.
struct RewardBreakdown {
    int format = 0;                      // {0,1}
    std::optional<int> accuracy;         // {0,1}
    std::optional<double> structured;    // [0,1]
    double total = 0.0;
};

/// 1 iff, after trimming outer whitespace, the output is exactly
/// <think>BODY</think> optional-whitespace <answer>BODY</answer> with both
/// bodies non-empty and each of the four tags occurring exactly once.
int format_reward(const std::string& output);

/// Verbatim answer-tag body. Requires format_reward(output) == 1.
std::string extract_answer(const std::string& output);

/// Normalization applied before comparison: lowercase (ASCII), trim, collapse
/// internal whitespace runs to one space, strip trailing .,!?;: characters.
/// Non-ASCII bytes pass through unchanged.
std::string normalize_answer(const std::string& text);

/// Strict match of normalized answers. When the gold answer is an MCQ option
/// of the form "(X) ...", a bare predicted letter X also scores 1.
int accuracy_reward(const std::string& predicted, const std::string& gold);

/// Per-category fractional content-word overlap between the caption and each
/// populated metadata category, averaged over populated categories. Numeric
/// BPM matches iff its integer rendering appears as a caption word.
double structured_thinking_reward(const std::string& caption, const meta::MusicMetadata& metadata);

struct QaTask {
    std::string gold;
};
struct CaptionTask {
    meta::MusicMetadata metadata;
};
using Task = std::variant<QaTask, CaptionTask>;

RewardBreakdown total_reward(const std::string& output, const Task& task);

/// The pinned 30-word stop list excluded from content-word counts.
const std::vector<std::string>& stop_words();

/// Normalized content words of a category value. Tokenization rule (applied
/// identically to captions): split on whitespace, commas, semicolons and
/// slashes; strip leading/trailing .,;:!?()[]{}"' from each token; ASCII
/// lowercase; drop stop-list words. Hyphenated words stay single tokens.
std::vector<std::string> content_words(const std::string& value);

} // namespace cadenza::rewards
