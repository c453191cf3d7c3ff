#include "cadenza/pipeline.hpp"

#include "cadenza/errors.hpp"
#include "cadenza/parallel.hpp"
#include "cadenza/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

namespace cadenza::pipeline {

namespace fs = std::filesystem;
using meta::DatasetRecord;
using meta::MusicMetadata;
using meta::StageAuditEntry;

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::size_t word_count(const std::string& text) {
    std::istringstream in(text);
    std::string w;
    std::size_t n = 0;
    while (in >> w) ++n;
    return n;
}

std::string joined_options(const std::vector<std::string>& options) {
    std::string out;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (i) out += " ";
        out += "(" + std::string(1, static_cast<char>('A' + i)) + ") " + options[i];
    }
    return out;
}

std::string render_bpm_int(double bpm) {
    return std::to_string(static_cast<long long>(std::llround(bpm)));
}

/// Append-only per-stage checkpoint keyed by input id. A resumed run skips
/// inputs whose outputs are already on disk, so a provider outage never
/// causes duplicate provider calls.
class StageCheckpoint {
public:
    StageCheckpoint(const std::string& dir, const std::string& stage) {
        if (dir.empty()) return;
        fs::create_directories(dir);
        path_ = (fs::path(dir) / (stage + ".ckpt.jsonl")).string();
        std::ifstream in(path_, std::ios::binary);
        std::string line;
        while (in && std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;
            std::vector<DatasetRecord> outputs;
            for (const auto& rec : j.at("records"))
                outputs.push_back(meta::parse_record(rec.dump()));
            done_[j.at("input_id").get<std::string>()] = std::move(outputs);
        }
    }

    bool has(const std::string& id) const { return done_.count(id) > 0; }
    const std::vector<DatasetRecord>& get(const std::string& id) const { return done_.at(id); }

    void put(const std::string& id, std::vector<DatasetRecord> outputs) {
        if (!path_.empty()) {
            nlohmann::ordered_json j;
            j["input_id"] = id;
            j["records"] = nlohmann::ordered_json::array();
            for (const auto& r : outputs)
                j["records"].push_back(nlohmann::ordered_json::parse(meta::serialize_record(r)));
            std::ofstream out(path_, std::ios::binary | std::ios::app);
            out << j.dump() << '\n';
        }
        done_[id] = std::move(outputs);
    }

private:
    std::string path_;
    std::map<std::string, std::vector<DatasetRecord>> done_;
};

/// Run `process` over the pending inputs in checkpoint-batch order. Worker
/// failures are collected; completed items are checkpointed before the first
/// provider failure is rethrown, which is what makes jobs resumable.
template <typename Input>
std::vector<DatasetRecord> run_checkpointed(
    const std::vector<Input>& inputs, const std::function<std::string(const Input&)>& id_of,
    const std::function<std::vector<DatasetRecord>(const Input&)>& process,
    const PipelineOptions& options, const std::string& stage) {
    StageCheckpoint checkpoint(options.output_dir, stage);

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        if (!checkpoint.has(id_of(inputs[i]))) pending.push_back(i);

    const auto batch = static_cast<std::size_t>(std::max(1, options.batch_size));
    for (std::size_t lo = 0; lo < pending.size(); lo += batch) {
        const std::size_t hi = std::min(pending.size(), lo + batch);
        std::vector<std::vector<DatasetRecord>> outputs(hi - lo);
        std::vector<std::exception_ptr> failures(hi - lo);
        parallel_for(hi - lo, options.workers, [&](std::size_t k) {
            try {
                outputs[k] = process(inputs[pending[lo + k]]);
            } catch (...) {
                failures[k] = std::current_exception();
            }
        });
        std::exception_ptr first_failure;
        for (std::size_t k = 0; k < outputs.size(); ++k) {
            if (failures[k]) {
                if (!first_failure) first_failure = failures[k];
                continue;
            }
            checkpoint.put(id_of(inputs[pending[lo + k]]), std::move(outputs[k]));
        }
        if (first_failure) std::rethrow_exception(first_failure);
    }

    // outputs in input order, flattened
    std::vector<DatasetRecord> out;
    for (const auto& input : inputs) {
        const auto& records = checkpoint.get(id_of(input));
        out.insert(out.end(), records.begin(), records.end());
    }
    return out;
}

std::string segment_id_of_record(const DatasetRecord& r) {
    const std::size_t slash = r.record_id.find('/');
    return slash == std::string::npos ? r.record_id : r.record_id.substr(0, slash);
}

bool has_audit(const DatasetRecord& r, const StageAuditEntry& entry) {
    for (const auto& e : r.stage_audit)
        if (e == entry) return true;
    return false;
}

/// Stage audits append once: re-running a stage over its own output must not
/// grow the trail.
void append_audit(DatasetRecord& r, StageAuditEntry entry) {
    if (!has_audit(r, entry)) r.stage_audit.push_back(std::move(entry));
}

constexpr std::size_t kAugmentTargetOptions = 8;

} // namespace

std::vector<SegmentRef> read_segment_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open segment manifest " + path);
    std::vector<SegmentRef> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError("bad segment manifest line: " + line);
        SegmentRef s;
        s.segment_id = j.at("segment_id").get<std::string>();
        s.clip_id = j.value("clip_id", s.segment_id);
        s.path = j.value("path", std::string{});
        s.offset_sec = j.value("offset_sec", 0.0);
        s.duration_sec = j.value("duration_sec", 0.0);
        out.push_back(std::move(s));
    }
    return out;
}

void write_segment_manifest(const std::vector<SegmentRef>& segments, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write segment manifest " + path);
    for (const auto& s : segments) {
        nlohmann::ordered_json j;
        j["segment_id"] = s.segment_id;
        j["clip_id"] = s.clip_id;
        j["path"] = s.path;
        j["offset_sec"] = s.offset_sec;
        j["duration_sec"] = s.duration_sec;
        out << j.dump() << '\n';
    }
}

const std::vector<std::string>& qa_skills() {
    static const std::vector<std::string> skills = {
        "Temporal understanding", "Attribute identification", "Harmonic & theoretical analysis",
        "Lyric and vocal grounding", "Comparative and structural reasoning"};
    return skills;
}

std::vector<DatasetRecord> synthesize_initial_captions(const std::vector<SegmentRef>& segments,
                                                       provider::Provider& provider,
                                                       const PipelineOptions& options) {
    return run_checkpointed<SegmentRef>(
        segments, [](const SegmentRef& s) { return s.segment_id; },
        [&](const SegmentRef& s) {
            provider::ProviderRequest req;
            req.role = provider::Role::captioner;
            req.template_id = "initial_caption";
            req.variables = {{"segment_id", s.segment_id},
                             {"offset_sec", std::to_string(s.offset_sec)}};
            if (!s.path.empty()) req.audio_ref = s.path;
            const auto resp = provider.send(req);

            DatasetRecord r;
            r.record_id = s.segment_id + "/cap0";
            r.kind = meta::RecordKind::caption;
            r.audio_path = s.path;
            r.audio_offset_sec = s.offset_sec;
            r.prompt = "Give a short description of this music clip.";
            r.target = resp.text;
            r.metadata.source_clip_id = s.clip_id;
            r.metadata.source_offset_sec = s.offset_sec;
            r.stage_audit.push_back({"synthesize", true, ""});
            return std::vector<DatasetRecord>{std::move(r)};
        },
        options, "synthesize");
}

std::vector<ExtractResult> extract_metadata(const std::vector<SegmentRef>& segments,
                                            const PipelineOptions& options,
                                            provider::Provider* transcriber) {
    std::vector<ExtractResult> results(segments.size());
    parallel_for(segments.size(), options.workers, [&](std::size_t i) {
        const SegmentRef& seg = segments[i];
        ExtractResult& out = results[i];
        out.segment_id = seg.segment_id;
        out.metadata.source_clip_id = seg.clip_id;
        out.metadata.source_offset_sec = seg.offset_sec;

        audio::AudioClip clip;
        try {
            clip = audio::load_wav(seg.path);
        } catch (const Error& e) {
            out.audit.push_back({"extract", false, e.kind() + std::string(": ") + e.what()});
            return;
        }

        std::optional<audio::OnsetEnvelope> env;
        std::optional<audio::TempoEstimate> tempo;
        try {
            env = audio::onset_envelope(clip);
            tempo = audio::estimate_tempo(*env);
            out.metadata.bpm = tempo->bpm;
            out.audit.push_back({"extract", true, "tempo"});
        } catch (const Error& e) {
            out.audit.push_back({"extract", false, e.kind() + std::string(": tempo")});
        }

        if (env && tempo) {
            const auto meter = audio::estimate_meter(*env, *tempo);
            out.metadata.meter = audio::meter_label(meter.meter);
            if (meter.low_confidence)
                out.audit.push_back({"extract", false, "meter: low confidence default"});
        }

        try {
            const auto chroma = audio::chromagram(clip);
            const auto key = audio::estimate_key(chroma);
            out.metadata.key = audio::key_label(key);
            out.audit.push_back({"extract", true, "key"});

            out.chords = audio::recognize_chords(chroma);
            std::string progression;
            for (const auto& c : out.chords) {
                if (!progression.empty()) progression += ", ";
                progression += c.label;
            }
            out.metadata.theory = "chord progression: " + progression;
        } catch (const Error& e) {
            out.audit.push_back({"extract", false, e.kind() + std::string(": key/chords")});
        }

        if (transcriber) {
            try {
                provider::ProviderRequest req;
                req.role = provider::Role::transcriber;
                req.template_id = "transcribe";
                req.variables = {{"segment_id", seg.segment_id}};
                req.audio_ref = seg.path;
                const auto resp = transcriber->send(req);
                if (!resp.text.empty()) out.metadata.lyrics = resp.text;
                out.audit.push_back({"extract", true, "lyrics"});
            } catch (const Error& e) {
                out.audit.push_back({"extract", false, e.kind() + std::string(": lyrics")});
            }
        }
    });
    return results;
}

std::vector<SegmentRef> synthetic_segments(int count) {
    std::vector<SegmentRef> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        SegmentRef s;
        char id[32];
        std::snprintf(id, sizeof id, "seg%05d", i);
        s.segment_id = id;
        s.clip_id = "clip" + std::to_string(i / 4);
        s.offset_sec = 30.0 * (i % 4);
        s.duration_sec = 30.0;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ExtractResult> synthetic_extracts(const std::vector<SegmentRef>& segments,
                                              std::uint64_t seed) {
    static const char* kGenres[] = {"Americana", "House", "Bebop", "Chanson", "Highlife"};
    static const char* kInstruments[] = {"acoustic guitar", "upright bass", "drum kit",
                                         "analog synth", "fiddle", "piano"};
    static const char* kThemes[] = {"longing", "departure", "celebration", "rainfall", "memory"};

    std::vector<ExtractResult> out(segments.size());
    for (std::size_t i = 0; i < segments.size(); ++i) {
        Rng rng(Rng::mix(seed, meta::fnv1a64(segments[i].segment_id)));
        ExtractResult& e = out[i];
        e.segment_id = segments[i].segment_id;
        MusicMetadata& m = e.metadata;
        m.genre = kGenres[rng.uniform_int(0, 4)];
        m.bpm = static_cast<double>(60 + 4 * rng.uniform_int(0, 40));
        audio::KeyEstimate k;
        k.tonic = static_cast<int>(rng.uniform_int(0, 11));
        k.mode = rng.uniform01() < 0.5 ? audio::KeyMode::major : audio::KeyMode::minor;
        m.key = audio::key_label(k);
        m.meter = rng.uniform01() < 0.8 ? "4/4" : "3/4";
        m.structure = {"Intro", "Verse", "Chorus", "Outro"};
        m.instruments = {kInstruments[rng.uniform_int(0, 5)], kInstruments[rng.uniform_int(0, 5)]};
        m.lyric_themes = {kThemes[rng.uniform_int(0, 4)], kThemes[rng.uniform_int(0, 4)]};
        m.theory = "chord progression: C:maj, A:min";
        m.source_clip_id = segments[i].clip_id;
        m.source_offset_sec = segments[i].offset_sec;
        e.audit.push_back({"extract", true, "synthetic"});
    }
    return out;
}

CreateOutput create_caption_and_qa(const std::vector<SegmentRef>& segments,
                                   const std::vector<DatasetRecord>& initial_captions,
                                   const std::vector<ExtractResult>& extracts,
                                   provider::Provider& provider, const PipelineOptions& options) {
    std::map<std::string, const DatasetRecord*> captions_by_segment;
    for (const auto& r : initial_captions) captions_by_segment[segment_id_of_record(r)] = &r;
    std::map<std::string, const ExtractResult*> extracts_by_segment;
    for (const auto& e : extracts) extracts_by_segment[e.segment_id] = &e;

    auto records = run_checkpointed<SegmentRef>(
        segments, [](const SegmentRef& s) { return s.segment_id; },
        [&](const SegmentRef& seg) {
            std::vector<DatasetRecord> out;
            const auto cap_it = captions_by_segment.find(seg.segment_id);
            const auto ext_it = extracts_by_segment.find(seg.segment_id);
            if (cap_it == captions_by_segment.end() || ext_it == extracts_by_segment.end())
                return out;  // unjoined segments produce nothing
            const DatasetRecord& initial = *cap_it->second;
            const ExtractResult& extract = *ext_it->second;
            const std::string metadata_text = meta::format_metadata(extract.metadata);

            // detailed caption
            provider::ProviderRequest cap_req;
            cap_req.role = provider::Role::captioner;
            cap_req.template_id = "detailed_caption";
            cap_req.variables = {{"metadata", metadata_text}, {"initial_caption", initial.target}};
            if (!seg.path.empty()) cap_req.audio_ref = seg.path;
            const auto cap_resp = provider.send(cap_req);

            DatasetRecord caption;
            caption.record_id = seg.segment_id + "/cap1";
            caption.kind = meta::RecordKind::caption;
            caption.audio_path = seg.path;
            caption.audio_offset_sec = seg.offset_sec;
            caption.prompt =
                "Describe the music in detail: tempo, key, instrumentation, production, lyrics, "
                "structure, harmony, and mood.";
            caption.target = cap_resp.text;
            caption.metadata = extract.metadata;
            caption.stage_audit = initial.stage_audit;
            for (const auto& a : extract.audit) caption.stage_audit.push_back(a);
            caption.stage_audit.push_back({"create", true, "caption"});
            out.push_back(caption);

            // five skill-targeted QAs
            for (std::size_t k = 0; k < qa_skills().size(); ++k) {
                const std::string& skill = qa_skills()[k];
                provider::ProviderRequest qa_req;
                qa_req.role = provider::Role::qa_generator;
                qa_req.template_id = "qa_generation";
                qa_req.variables = {{"skill", skill},
                                    {"metadata", metadata_text},
                                    {"caption", cap_resp.text}};
                if (!seg.path.empty()) qa_req.audio_ref = seg.path;
                const auto qa_resp = provider.send(qa_req);

                const auto j = nlohmann::json::parse(qa_resp.text, nullptr, false);
                if (j.is_discarded() || !j.is_object()) continue;  // dropped: unparseable
                DatasetRecord qa;
                qa.record_id = seg.segment_id + "/qa" + std::to_string(k);
                qa.kind = meta::RecordKind::qa;
                qa.audio_path = seg.path;
                qa.audio_offset_sec = seg.offset_sec;
                qa.skill = skill;
                qa.metadata = extract.metadata;
                try {
                    qa.prompt = j.at("question").get<std::string>();
                    qa.options = j.at("options").get<std::vector<std::string>>();
                    qa.answer_index = j.at("answer_index").get<int>();
                    if (*qa.answer_index < 0 ||
                        *qa.answer_index >= static_cast<int>(qa.options.size()))
                        continue;  // dropped: bad index
                    qa.target = qa.options[static_cast<std::size_t>(*qa.answer_index)];
                    qa.stage_audit.push_back({"create", true, "skill=" + skill});
                    meta::validate(qa);
                } catch (const std::exception&) {
                    continue;  // dropped: fails DatasetRecord validation
                }
                out.push_back(std::move(qa));
            }
            return out;
        },
        options, "create");

    CreateOutput result;
    result.stats.inputs = segments.size();
    double words = 0.0;
    std::size_t captions = 0;
    for (const auto& r : records) {
        if (r.kind == meta::RecordKind::caption) {
            words += static_cast<double>(word_count(r.target));
            ++captions;
        }
    }
    result.stats.mean_caption_words = captions ? words / static_cast<double>(captions) : 0.0;
    result.stats.kept = records.size();
    result.records = std::move(records);
    return result;
}

meta::DatasetRecord rewrite_caption(const DatasetRecord& existing, const MusicMetadata& metadata,
                                    provider::Provider& provider) {
    // already rewritten successfully: stage is a no-op on its own output
    for (const auto& entry : existing.stage_audit)
        if (entry.stage == "rewrite" && entry.passed) return existing;

    provider::ProviderRequest req;
    req.role = provider::Role::captioner;
    req.template_id = "caption_correction";
    req.variables = {{"caption", existing.target},
                     {"metadata", meta::format_metadata(metadata)},
                     {"lyrics", metadata.lyrics.value_or("")},
                     {"bpm", metadata.bpm ? render_bpm_int(*metadata.bpm) : ""},
                     {"key", metadata.key.value_or("")},
                     {"lyric_themes", [&] {
                          std::string t;
                          for (const auto& theme : metadata.lyric_themes) {
                              if (!t.empty()) t += ", ";
                              t += theme;
                          }
                          return t;
                      }()},
                     {"vocal_character", [&] {
                          std::string v;
                          for (const auto& vc : metadata.vocal_character) {
                              if (!v.empty()) v += ", ";
                              v += vc;
                          }
                          return v;
                      }()}};
    const auto resp = provider.send(req);

    // post-check: metadata-sourced bpm/key must appear verbatim
    bool consistent = true;
    if (metadata.bpm && resp.text.find(render_bpm_int(*metadata.bpm)) == std::string::npos)
        consistent = false;
    if (metadata.key && lower(resp.text).find(lower(*metadata.key)) == std::string::npos)
        consistent = false;

    if (!consistent) {
        DatasetRecord kept = existing;
        kept.stage_audit.push_back({"rewrite", false, "RewriteInconsistent: original kept"});
        return kept;
    }

    DatasetRecord rewritten = existing;
    rewritten.record_id = existing.record_id + "/rw";
    rewritten.target = resp.text;
    rewritten.metadata = metadata;
    rewritten.stage_audit.push_back({"rewrite", true, "lineage=" + existing.record_id});
    return rewritten;
}

meta::DatasetRecord augment_options(const DatasetRecord& qa, provider::Provider& provider,
                                    std::uint64_t seed) {
    if ((qa.kind != meta::RecordKind::qa && qa.kind != meta::RecordKind::cot_qa) ||
        qa.options.size() < 2 || !qa.answer_index)
        throw InvalidArgument("augment_options needs a qa record with >= 2 options");
    if (qa.options.size() >= kAugmentTargetOptions) return qa;  // target already met

    provider::ProviderRequest req;
    req.role = provider::Role::qa_generator;
    req.template_id = "option_augmentation";
    req.variables = {{"question", qa.prompt},
                     {"options", joined_options(qa.options)},
                     {"answer", qa.target}};
    const auto resp = provider.send(req);

    const auto j = nlohmann::json::parse(resp.text, nullptr, false);
    if (j.is_discarded() || !j.is_array())
        throw ParseError("option_augmentation expected a JSON list of distractors");

    const std::string correct = qa.options[static_cast<std::size_t>(*qa.answer_index)];
    std::vector<std::string> options = qa.options;
    std::set<std::string> seen;
    for (const auto& o : options) seen.insert(lower(o));
    for (const auto& d : j) {
        const std::string text = d.get<std::string>();
        const std::string folded = lower(text);
        if (folded == lower(correct)) continue;  // clone of the answer: dropped
        if (!seen.insert(folded).second) continue;  // dedup, case-insensitive
        options.push_back(text);
    }

    // seeded shuffle; the answer index follows the correct option
    Rng rng(Rng::mix(seed, meta::fnv1a64(qa.record_id)));
    for (std::size_t i = options.size(); i > 1; --i)
        std::swap(options[i - 1], options[static_cast<std::size_t>(rng.uniform_int(
                                      0, static_cast<std::int64_t>(i) - 1))]);

    DatasetRecord out = qa;
    out.options = options;
    const auto pos = std::find(options.begin(), options.end(), correct);
    out.answer_index = static_cast<int>(pos - options.begin());
    out.target = correct;
    out.stage_audit.push_back(
        {"augment", true, "options=" + std::to_string(options.size())});
    return out;
}

FilterOutput quality_filter(const std::vector<DatasetRecord>& records,
                            provider::Provider& provider, const PipelineOptions& options) {
    struct Judgment {
        bool keep = true;
        bool flagged = false;
    };
    std::vector<Judgment> judgments(records.size());
    parallel_for(records.size(), options.workers, [&](std::size_t i) {
        provider::ProviderRequest req;
        req.role = provider::Role::verifier;
        req.template_id = "quality_check";
        req.variables = {{"record", records[i].prompt + " | " + records[i].target}};
        try {
            const auto resp = provider.send(req);
            judgments[i].keep = resp.verdict == provider::Verdict::yes;
        } catch (const MalformedVerdict&) {
            judgments[i] = {true, true};  // kept, flagged for manual review
        }
    });

    FilterOutput out;
    out.stats.inputs = records.size();
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!judgments[i].keep) {
            ++out.stats.dropped;
            continue;
        }
        DatasetRecord r = records[i];
        append_audit(r, {"filter", !judgments[i].flagged,
                         judgments[i].flagged ? "MalformedVerdict: manual review" : ""});
        out.records.push_back(std::move(r));
    }
    out.stats.kept = out.records.size();
    out.stats.drop_rate =
        records.empty() ? 0.0
                        : static_cast<double>(out.stats.dropped) / static_cast<double>(records.size());
    return out;
}

std::vector<DatasetRecord> select_hard_examples(const std::vector<DatasetRecord>& records,
                                                provider::Provider& provider,
                                                const PipelineOptions& options) {
    std::vector<char> hard(records.size(), 0);
    parallel_for(records.size(), options.workers, [&](std::size_t i) {
        provider::ProviderRequest req;
        req.role = provider::Role::verifier;
        req.template_id = "hard_probe";
        req.variables = {{"question", records[i].prompt},
                         {"options", joined_options(records[i].options)},
                         {"option_count", std::to_string(records[i].options.size())}};
        try {
            const auto resp = provider.send(req);
            hard[i] = resp.verdict == provider::Verdict::yes ? 1 : 0;
        } catch (const MalformedVerdict&) {
            hard[i] = 0;
        }
    });

    std::vector<DatasetRecord> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!hard[i]) continue;
        DatasetRecord r = records[i];
        append_audit(r, {"hard", true, ""});
        out.push_back(std::move(r));
    }
    return out;
}

const char* disposition_name(Disposition d) {
    switch (d) {
        case Disposition::kept: return "kept";
        case Disposition::rewritten: return "rewritten";
        case Disposition::discarded: return "discarded";
    }
    return "kept";
}

Disposition think_disposition(double fail_fraction) {
    if (fail_fraction <= 0.0) return Disposition::kept;
    if (fail_fraction > 0.30) return Disposition::discarded;  // strict >
    return Disposition::rewritten;
}

std::vector<std::string> split_steps(const std::string& chain) {
    std::vector<std::string> steps;
    std::string current;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        const char c = chain[i];
        if (c == '\n') {
            if (!current.empty()) steps.push_back(current);
            current.clear();
            continue;
        }
        current.push_back(c);
        if ((c == '.' || c == '!' || c == '?') &&
            (i + 1 == chain.size() || std::isspace(static_cast<unsigned char>(chain[i + 1])))) {
            steps.push_back(current);
            current.clear();
        }
    }
    if (!current.empty()) steps.push_back(current);

    std::vector<std::string> out;
    for (auto& s : steps) {
        const std::size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        const std::size_t b = s.find_last_not_of(" \t\r");
        out.push_back(s.substr(a, b - a + 1));
    }
    return out;
}

const char* kThinkInstruction =
    "Output the thinking process in <think> </think> and final answer in <answer> </answer>";

std::vector<CotRecord> build_think(const std::vector<DatasetRecord>& records,
                                   provider::Provider& provider, const PipelineOptions& options) {
    // CotRecords carry non-record state, so checkpoint the underlying stage
    // through a side map rather than run_checkpointed
    std::vector<CotRecord> results(records.size());
    std::vector<std::exception_ptr> failures(records.size());

    const auto process = [&](std::size_t i) {
        const DatasetRecord& record = records[i];
        const bool is_qa = record.kind == meta::RecordKind::qa ||
                           record.kind == meta::RecordKind::cot_qa;

        // re-running over already-built CoT records changes nothing
        if (record.kind == meta::RecordKind::cot_caption ||
            record.kind == meta::RecordKind::cot_qa) {
            CotRecord done;
            done.base = record;
            done.steps = split_steps(record.think.value_or(""));
            done.step_verdicts.assign(done.steps.size(), true);
            done.fail_fraction = 0.0;
            done.disposition = Disposition::kept;
            return done;
        }
        const std::string metadata_text = meta::format_metadata(record.metadata);

        provider::ProviderRequest req;
        req.role = provider::Role::cot_generator;
        req.template_id = is_qa ? "cot_qa" : "cot_caption";
        if (is_qa) {
            req.variables = {{"question", record.prompt},
                             {"options", joined_options(record.options)},
                             {"metadata", metadata_text}};
        } else {
            req.variables = {{"metadata", metadata_text}, {"caption", record.target}};
        }
        if (!record.audio_path.empty()) req.audio_ref = record.audio_path;
        const auto chain = provider.send(req);

        CotRecord cot;
        cot.steps = split_steps(chain.text);

        const auto verify_step = [&](const std::string& step) {
            provider::ProviderRequest v;
            v.role = provider::Role::verifier;
            v.template_id = "step_verify";
            v.variables = {{"metadata", metadata_text}, {"step", step}};
            if (!record.audio_path.empty()) v.audio_ref = record.audio_path;
            return provider.send(v).verdict == provider::Verdict::yes;
        };

        cot.step_verdicts.clear();
        std::size_t fails = 0;
        for (const auto& step : cot.steps) {
            const bool ok = verify_step(step);
            cot.step_verdicts.push_back(ok);
            if (!ok) ++fails;
        }
        cot.fail_fraction =
            cot.steps.empty() ? 1.0
                              : static_cast<double>(fails) / static_cast<double>(cot.steps.size());
        cot.disposition = think_disposition(cot.fail_fraction);

        if (cot.disposition == Disposition::rewritten) {
            // one rewrite attempt for the failing steps, then re-verify
            for (std::size_t s = 0; s < cot.steps.size(); ++s) {
                if (cot.step_verdicts[s]) continue;
                provider::ProviderRequest rw;
                rw.role = provider::Role::cot_generator;
                rw.template_id = "step_rewrite";
                rw.variables = {{"metadata", metadata_text}, {"step", cot.steps[s]}};
                cot.steps[s] = provider.send(rw).text;
                cot.step_verdicts[s] = verify_step(cot.steps[s]);
            }
        }

        cot.base = record;
        cot.base.kind = is_qa ? meta::RecordKind::cot_qa : meta::RecordKind::cot_caption;
        cot.base.record_id = record.record_id + "/think";
        std::string think_text;
        for (const auto& s : cot.steps) {
            if (!think_text.empty()) think_text += ' ';
            think_text += s;
        }
        cot.base.think = think_text;
        cot.base.prompt = record.prompt + "\n" + kThinkInstruction;
        append_audit(cot.base, {"think", cot.disposition != Disposition::discarded,
                                disposition_name(cot.disposition)});
        return cot;
    };

    const auto batch = static_cast<std::size_t>(std::max(1, options.batch_size));
    for (std::size_t lo = 0; lo < records.size(); lo += batch) {
        const std::size_t hi = std::min(records.size(), lo + batch);
        parallel_for(hi - lo, options.workers, [&](std::size_t k) {
            try {
                results[lo + k] = process(lo + k);
            } catch (...) {
                failures[lo + k] = std::current_exception();
            }
        });
        for (std::size_t k = lo; k < hi; ++k)
            if (failures[k]) std::rethrow_exception(failures[k]);
    }
    return results;
}

} // namespace cadenza::pipeline
