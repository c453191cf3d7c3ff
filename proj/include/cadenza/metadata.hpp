#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cadenza::meta {

/// Structured per-segment record. The 11 canonical categories mirror the
/// structured-metadata layout the rewards are scored against; `lyrics` and
/// the source reference ride along outside the category set. Unknown input
/// categories are preserved verbatim in `extras`.
struct MusicMetadata {
    std::optional<std::string> genre;
    std::optional<double> bpm;  // beats/min, [40,240] when present
    std::optional<std::string> key;  // e.g. "G minor"
    std::optional<std::string> meter;  // e.g. "4/4"
    std::vector<std::string> structure;
    std::vector<std::string> instruments;
    std::vector<std::string> vocal_character;
    std::vector<std::string> lyric_themes;
    std::optional<std::string> theory;
    std::optional<std::string> mix_notes;
    std::optional<std::string> dynamics;

    std::optional<std::string> lyrics;
    std::optional<std::string> source_clip_id;
    std::optional<double> source_offset_sec;
    std::map<std::string, std::string> extras;

    bool operator==(const MusicMetadata&) const = default;

    /// Number of populated canonical categories (extras and lyrics excluded).
    int populated_category_count() const;

    /// (category name, rendered value) for each populated canonical category.
    std::vector<std::pair<std::string, std::string>> populated_categories() const;
};

/// The 11 canonical category names, in serialization order.
const std::vector<std::string>& category_names();

enum class RecordKind { caption, qa, cot_caption, cot_qa };

const char* record_kind_name(RecordKind k);
RecordKind record_kind_from_name(const std::string& name);

struct StageAuditEntry {
    std::string stage;
    bool passed = true;
    std::string note;

    bool operator==(const StageAuditEntry&) const = default;
};

/// One caption / QA / CoT training example with provenance and audit trail.
struct DatasetRecord {
    std::string record_id;
    RecordKind kind = RecordKind::caption;
    std::string audio_path;
    double audio_offset_sec = 0.0;
    std::string prompt;
    std::string target;
    std::vector<std::string> options;          // MCQ options (qa kinds)
    std::optional<int> answer_index;
    std::optional<std::string> think;          // CoT trace (cot kinds)
    std::optional<std::string> skill;          // QA skill tag
    MusicMetadata metadata;
    std::vector<StageAuditEntry> stage_audit;

    bool operator==(const DatasetRecord&) const = default;
};

/// Throws ValidationError naming the offending field when a record violates
/// its kind invariants.
void validate(const DatasetRecord& record);

/// Parse the brace-delimited `{"Category": value, ...}` structured-metadata
/// text, or an equivalent JSON object. Category names match case- and
/// separator-insensitively; unknown names land in extras. Numeric BPM is
/// taken from the leading digits of its value.
MusicMetadata parse_metadata(const std::string& text);

/// Compact single-line rendering in the brace category:value format.
std::string format_metadata(const MusicMetadata& m);

// ---- JSONL --------------------------------------------------------------

std::string serialize_record(const DatasetRecord& record);
std::string serialize_records(const std::vector<DatasetRecord>& records);
DatasetRecord parse_record(const std::string& json_line);
std::vector<DatasetRecord> parse_records(const std::string& jsonl);

std::string serialize_metadata_json(const MusicMetadata& m);
MusicMetadata parse_metadata_json(const std::string& json_text);

// ---- shard manifest -------------------------------------------------------

struct ShardInfo {
    std::string path;
    std::uint64_t record_count = 0;
    std::string content_hash;  // fnv1a-64 of the shard bytes, hex
};

struct Manifest {
    std::vector<ShardInfo> shards;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string fnv1a64_hex(const std::string& bytes);

void write_shards(const std::vector<DatasetRecord>& records, const std::string& dir,
                  const std::string& stem, std::size_t records_per_shard,
                  Manifest* manifest_out = nullptr);
Manifest read_manifest(const std::string& path);
std::vector<DatasetRecord> read_shards(const Manifest& manifest, const std::string& base_dir);

std::vector<DatasetRecord> load_records_file(const std::string& path);
void save_records_file(const std::vector<DatasetRecord>& records, const std::string& path);

} // namespace cadenza::meta
