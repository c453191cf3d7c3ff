#include "cadenza/metadata.hpp"

#include "cadenza/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace cadenza::meta {

namespace {

using ordered_json = nlohmann::ordered_json;

const std::vector<std::string> kCategoryNames = {
    "Genre",       "BPM",          "Key",          "Meter",     "Structure", "Instruments",
    "Vocal Character", "Lyric Themes", "Theory", "Mix Notes", "Dynamics"};

/// lowercase with spaces/underscores/hyphens removed, for category matching
std::string canon(const std::string& s) {
    std::string out;
    for (const char c : s) {
        if (c == ' ' || c == '_' || c == '-') continue;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ", ";
        out += items[i];
    }
    return out;
}

std::optional<double> parse_leading_number(const std::string& value) {
    const std::size_t first = value.find_first_of("0123456789");
    if (first == std::string::npos) return std::nullopt;
    std::size_t end = first;
    while (end < value.size() && (std::isdigit(static_cast<unsigned char>(value[end])) || value[end] == '.'))
        ++end;
    try {
        return std::stod(value.substr(first, end - first));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::string render_bpm(double bpm) {
    if (std::abs(bpm - std::round(bpm)) < 1e-9)
        return std::to_string(static_cast<long long>(std::llround(bpm)));
    std::ostringstream os;
    os << bpm;
    return os.str();
}

void assign_category(MusicMetadata& m, const std::string& name, const std::string& value) {
    const std::string c = canon(name);
    if (c == "genre") {
        m.genre = value;
    } else if (c == "bpm" || c == "tempo") {
        if (auto n = parse_leading_number(value)) {
            m.bpm = *n;
        } else {
            m.extras[name] = value;
        }
    } else if (c == "key") {
        m.key = value;
    } else if (c == "meter") {
        m.meter = value;
    } else if (c == "structure") {
        m.structure = split_list(value);
    } else if (c == "instruments") {
        m.instruments = split_list(value);
    } else if (c == "vocalcharacter") {
        m.vocal_character = split_list(value);
    } else if (c == "lyricthemes") {
        m.lyric_themes = split_list(value);
    } else if (c == "theory") {
        m.theory = value;
    } else if (c == "mixnotes") {
        m.mix_notes = value;
    } else if (c == "dynamics") {
        m.dynamics = value;
    } else if (c == "lyrics") {
        m.lyrics = value;
    } else {
        m.extras[name] = value;
    }
}

bool is_quote(char c) { return c == '"' || c == '`' || c == '\''; }

/// Scanner for the brace category:value format. Category names must be
/// quoted (straight quotes or the ``name'' style); values run until the next
/// quoted name or the closing brace, so they may contain commas freely.
MusicMetadata parse_box_format(const std::string& text) {
    const std::string body = trim(text);
    if (body.size() < 2 || body.front() != '{' || body.back() != '}')
        throw ParseError("expected brace-delimited record");

    MusicMetadata m;
    const std::string inner = body.substr(1, body.size() - 2);
    std::size_t pos = 0;
    const auto at_name_start = [&](std::size_t p) {
        while (p < inner.size() && std::isspace(static_cast<unsigned char>(inner[p]))) ++p;
        return p < inner.size() && is_quote(inner[p]);
    };

    while (pos < inner.size()) {
        while (pos < inner.size() &&
               (std::isspace(static_cast<unsigned char>(inner[pos])) || inner[pos] == ','))
            ++pos;
        if (pos >= inner.size()) break;
        if (!is_quote(inner[pos])) throw ParseError("expected quoted category name");
        while (pos < inner.size() && is_quote(inner[pos])) ++pos;
        std::size_t name_end = pos;
        while (name_end < inner.size() && !is_quote(inner[name_end]) && inner[name_end] != ':')
            ++name_end;
        const std::string name = trim(inner.substr(pos, name_end - pos));
        pos = name_end;
        while (pos < inner.size() && is_quote(inner[pos])) ++pos;
        while (pos < inner.size() && std::isspace(static_cast<unsigned char>(inner[pos]))) ++pos;
        if (pos >= inner.size() || inner[pos] != ':')
            throw ParseError("expected ':' after category name '" + name + "'");
        ++pos;

        // value runs to the next `, "name"` boundary or end
        std::size_t value_end = pos;
        while (value_end < inner.size()) {
            if (inner[value_end] == ',' && at_name_start(value_end + 1)) break;
            ++value_end;
        }
        assign_category(m, name, trim(inner.substr(pos, value_end - pos)));
        pos = value_end;
    }

    if (m.populated_category_count() == 0 && !m.lyrics)
        throw EmptyRecord("no recognizable categories");
    return m;
}

void metadata_to_json(const MusicMetadata& m, ordered_json& j) {
    if (m.genre) j["genre"] = *m.genre;
    if (m.bpm) j["bpm"] = *m.bpm;
    if (m.key) j["key"] = *m.key;
    if (m.meter) j["meter"] = *m.meter;
    if (!m.structure.empty()) j["structure"] = m.structure;
    if (!m.instruments.empty()) j["instruments"] = m.instruments;
    if (!m.vocal_character.empty()) j["vocal_character"] = m.vocal_character;
    if (!m.lyric_themes.empty()) j["lyric_themes"] = m.lyric_themes;
    if (m.theory) j["theory"] = *m.theory;
    if (m.mix_notes) j["mix_notes"] = *m.mix_notes;
    if (m.dynamics) j["dynamics"] = *m.dynamics;
    if (m.lyrics) j["lyrics"] = *m.lyrics;
    if (m.source_clip_id) j["source_clip_id"] = *m.source_clip_id;
    if (m.source_offset_sec) j["source_offset_sec"] = *m.source_offset_sec;
    if (!m.extras.empty()) j["extras"] = m.extras;
}

MusicMetadata metadata_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("metadata must be a JSON object");
    MusicMetadata m;
    for (const auto& [name, value] : j.items()) {
        const std::string c = canon(name);
        if (c == "sourceclipid") {
            m.source_clip_id = value.get<std::string>();
        } else if (c == "sourceoffsetsec") {
            m.source_offset_sec = value.get<double>();
        } else if (c == "extras") {
            for (const auto& [k, v] : value.items()) m.extras[k] = v.get<std::string>();
        } else if (value.is_number()) {
            if (c == "bpm" || c == "tempo")
                m.bpm = value.get<double>();
            else
                assign_category(m, name, render_bpm(value.get<double>()));
        } else if (value.is_array()) {
            std::vector<std::string> items;
            for (const auto& v : value) items.push_back(v.get<std::string>());
            assign_category(m, name, join_list(items));
        } else if (value.is_string()) {
            assign_category(m, name, value.get<std::string>());
        } else {
            throw ParseError("unsupported value type for category '" + name + "'");
        }
    }
    return m;
}

std::optional<std::pair<int, bool>> parse_key_text(const std::string& key) {
    const std::string t = trim(key);
    if (t.size() < 3) return std::nullopt;
    static constexpr int kLetterPc[] = {9, 11, 0, 2, 4, 5, 7};  // A..G
    const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(t[0])));
    if (letter < 'A' || letter > 'G') return std::nullopt;
    int pc = kLetterPc[letter - 'A'];
    std::size_t pos = 1;
    if (pos < t.size() && (t[pos] == '#' || t[pos] == 'b')) {
        pc = (pc + (t[pos] == '#' ? 1 : 11)) % 12;
        ++pos;
    }
    std::string rest = canon(t.substr(pos));
    if (rest == "major" || rest == "maj") return {{pc, true}};
    if (rest == "minor" || rest == "min") return {{pc, false}};
    return std::nullopt;
}

} // namespace

const std::vector<std::string>& category_names() { return kCategoryNames; }

int MusicMetadata::populated_category_count() const {
    return static_cast<int>(populated_categories().size());
}

std::vector<std::pair<std::string, std::string>> MusicMetadata::populated_categories() const {
    std::vector<std::pair<std::string, std::string>> out;
    if (genre) out.emplace_back("Genre", *genre);
    if (bpm) out.emplace_back("BPM", render_bpm(*bpm));
    if (key) out.emplace_back("Key", *key);
    if (meter) out.emplace_back("Meter", *meter);
    if (!structure.empty()) out.emplace_back("Structure", join_list(structure));
    if (!instruments.empty()) out.emplace_back("Instruments", join_list(instruments));
    if (!vocal_character.empty()) out.emplace_back("Vocal Character", join_list(vocal_character));
    if (!lyric_themes.empty()) out.emplace_back("Lyric Themes", join_list(lyric_themes));
    if (theory) out.emplace_back("Theory", *theory);
    if (mix_notes) out.emplace_back("Mix Notes", *mix_notes);
    if (dynamics) out.emplace_back("Dynamics", *dynamics);
    return out;
}

const char* record_kind_name(RecordKind k) {
    switch (k) {
        case RecordKind::caption: return "caption";
        case RecordKind::qa: return "qa";
        case RecordKind::cot_caption: return "cot_caption";
        case RecordKind::cot_qa: return "cot_qa";
    }
    return "caption";
}

RecordKind record_kind_from_name(const std::string& name) {
    if (name == "caption") return RecordKind::caption;
    if (name == "qa") return RecordKind::qa;
    if (name == "cot_caption") return RecordKind::cot_caption;
    if (name == "cot_qa") return RecordKind::cot_qa;
    throw ParseError("unknown record kind '" + name + "'");
}

void validate(const DatasetRecord& r) {
    if (r.record_id.empty()) throw ValidationError("record_id is empty");
    if (r.target.empty()) throw ValidationError("target is empty (record " + r.record_id + ")");
    if (r.kind == RecordKind::qa || r.kind == RecordKind::cot_qa) {
        if (r.options.empty())
            throw ValidationError("options empty for qa record " + r.record_id);
        if (!r.answer_index)
            throw ValidationError("answer_index missing for qa record " + r.record_id);
        if (*r.answer_index < 0 || *r.answer_index >= static_cast<int>(r.options.size()))
            throw ValidationError("answer_index out of range for record " + r.record_id);
    }
    if (r.kind == RecordKind::cot_caption || r.kind == RecordKind::cot_qa) {
        if (!r.think || r.think->empty())
            throw ValidationError("think empty for cot record " + r.record_id);
    }
    if (r.metadata.bpm && (*r.metadata.bpm < 40.0 || *r.metadata.bpm > 240.0))
        throw ValidationError("metadata.bpm out of [40,240] for record " + r.record_id);
    if (r.metadata.key && !parse_key_text(*r.metadata.key))
        throw ValidationError("metadata.key unparseable for record " + r.record_id);
}

MusicMetadata parse_metadata(const std::string& text) {
    // JSON object first, box-format scanner otherwise
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (!j.is_discarded() && j.is_object()) {
        MusicMetadata m = metadata_from_json(j);
        if (m.populated_category_count() == 0 && !m.lyrics)
            throw EmptyRecord("no recognizable categories");
        return m;
    }
    return parse_box_format(text);
}

std::string format_metadata(const MusicMetadata& m) {
    std::string out = "{";
    bool first = true;
    for (const auto& [name, value] : m.populated_categories()) {
        if (!first) out += ", ";
        out += "\"" + name + "\": " + value;
        first = false;
    }
    if (m.lyrics) {
        if (!first) out += ", ";
        out += "\"Lyrics\": " + *m.lyrics;
        first = false;
    }
    for (const auto& [name, value] : m.extras) {
        if (!first) out += ", ";
        out += "\"" + name + "\": " + value;
        first = false;
    }
    out += "}";
    return out;
}

std::string serialize_metadata_json(const MusicMetadata& m) {
    ordered_json j = ordered_json::object();
    metadata_to_json(m, j);
    return j.dump();
}

MusicMetadata parse_metadata_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid metadata JSON");
    return metadata_from_json(j);
}

std::string serialize_record(const DatasetRecord& r) {
    validate(r);
    ordered_json j;
    j["record_id"] = r.record_id;
    j["kind"] = record_kind_name(r.kind);
    j["audio_path"] = r.audio_path;
    j["audio_offset_sec"] = r.audio_offset_sec;
    j["prompt"] = r.prompt;
    j["target"] = r.target;
    if (!r.options.empty()) j["options"] = r.options;
    if (r.answer_index) j["answer_index"] = *r.answer_index;
    if (r.think) j["think"] = *r.think;
    if (r.skill) j["skill"] = *r.skill;
    j["metadata"] = ordered_json::object();
    metadata_to_json(r.metadata, j["metadata"]);
    if (!r.stage_audit.empty()) {
        auto& audit = j["stage_audit"] = ordered_json::array();
        for (const auto& e : r.stage_audit)
            audit.push_back({{"stage", e.stage}, {"passed", e.passed}, {"note", e.note}});
    }
    return j.dump();
}

std::string serialize_records(const std::vector<DatasetRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += serialize_record(r);
        out += '\n';
    }
    return out;
}

DatasetRecord parse_record(const std::string& line) {
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ParseError("invalid record JSON");
    DatasetRecord r;
    try {
        r.record_id = j.at("record_id").get<std::string>();
        r.kind = record_kind_from_name(j.at("kind").get<std::string>());
        r.audio_path = j.value("audio_path", std::string{});
        r.audio_offset_sec = j.value("audio_offset_sec", 0.0);
        r.prompt = j.value("prompt", std::string{});
        r.target = j.value("target", std::string{});
        if (j.contains("options")) r.options = j["options"].get<std::vector<std::string>>();
        if (j.contains("answer_index")) r.answer_index = j["answer_index"].get<int>();
        if (j.contains("think")) r.think = j["think"].get<std::string>();
        if (j.contains("skill")) r.skill = j["skill"].get<std::string>();
        if (j.contains("metadata")) r.metadata = metadata_from_json(j["metadata"]);
        if (j.contains("stage_audit")) {
            for (const auto& e : j["stage_audit"]) {
                StageAuditEntry entry;
                entry.stage = e.at("stage").get<std::string>();
                entry.passed = e.at("passed").get<bool>();
                entry.note = e.value("note", std::string{});
                r.stage_audit.push_back(std::move(entry));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("record field error: ") + e.what());
    }
    validate(r);
    return r;
}

std::vector<DatasetRecord> parse_records(const std::string& jsonl) {
    std::vector<DatasetRecord> out;
    std::stringstream ss(jsonl);
    std::string line;
    while (std::getline(ss, line)) {
        if (trim(line).empty()) continue;
        out.push_back(parse_record(line));
    }
    return out;
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (const char c : bytes) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string fnv1a64_hex(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

void write_shards(const std::vector<DatasetRecord>& records, const std::string& dir,
                  const std::string& stem, std::size_t records_per_shard, Manifest* manifest_out) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    Manifest manifest;
    const std::size_t n_shards =
        records.empty() ? 0 : (records.size() + records_per_shard - 1) / records_per_shard;
    for (std::size_t s = 0; s < n_shards; ++s) {
        const std::size_t lo = s * records_per_shard;
        const std::size_t hi = std::min(records.size(), lo + records_per_shard);
        std::string body;
        for (std::size_t i = lo; i < hi; ++i) {
            body += serialize_record(records[i]);
            body += '\n';
        }
        char name[64];
        std::snprintf(name, sizeof name, "%s-%05zu.jsonl", stem.c_str(), s);
        const fs::path path = fs::path(dir) / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        out << body;
        manifest.shards.push_back({name, hi - lo, fnv1a64_hex(body)});
    }

    ordered_json j;
    j["shards"] = ordered_json::array();
    for (const auto& s : manifest.shards)
        j["shards"].push_back(
            {{"path", s.path}, {"record_count", s.record_count}, {"content_hash", s.content_hash}});
    const fs::path mpath = fs::path(dir) / (stem + ".manifest.json");
    std::ofstream mout(mpath, std::ios::binary);
    if (!mout) throw IoError("cannot write " + mpath.string());
    mout << j.dump(2) << '\n';

    if (manifest_out) *manifest_out = std::move(manifest);
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    in >> j;
    Manifest m;
    for (const auto& s : j.at("shards"))
        m.shards.push_back({s.at("path").get<std::string>(), s.at("record_count").get<std::uint64_t>(),
                            s.at("content_hash").get<std::string>()});
    return m;
}

std::vector<DatasetRecord> read_shards(const Manifest& manifest, const std::string& base_dir) {
    namespace fs = std::filesystem;
    std::vector<DatasetRecord> out;
    for (const auto& shard : manifest.shards) {
        const fs::path path = fs::path(base_dir) / shard.path;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open shard " + path.string());
        std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (fnv1a64_hex(body) != shard.content_hash)
            throw ValidationError("content hash mismatch for shard " + shard.path);
        auto records = parse_records(body);
        if (records.size() != shard.record_count)
            throw ValidationError("record count mismatch for shard " + shard.path);
        out.insert(out.end(), std::make_move_iterator(records.begin()),
                   std::make_move_iterator(records.end()));
    }
    return out;
}

std::vector<DatasetRecord> load_records_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_records(body);
}

void save_records_file(const std::vector<DatasetRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << serialize_records(records);
}

} // namespace cadenza::meta
