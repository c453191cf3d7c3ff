#pragma once

#include "cadenza/audio.hpp"
#include "cadenza/metadata.hpp"
#include "cadenza/provider.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cadenza::pipeline {

/// One 30 s (by default) corpus segment. `path` points at a decodable WAV
/// holding the segment audio; `offset_sec` records where it sat in the
/// source clip.
struct SegmentRef {
    std::string segment_id;
    std::string clip_id;
    std::string path;
    double offset_sec = 0.0;
    double duration_sec = 0.0;
};

std::vector<SegmentRef> read_segment_manifest(const std::string& path);
void write_segment_manifest(const std::vector<SegmentRef>& segments, const std::string& path);

struct PipelineOptions {
    std::uint64_t seed = 0;
    std::string output_dir;  // checkpoints land here; empty disables them
    int batch_size = 64;
    int workers = 1;
};

struct PipelineStats {
    std::size_t inputs = 0;
    std::size_t kept = 0;
    std::size_t dropped = 0;
    double drop_rate = 0.0;
    double mean_caption_words = 0.0;
};

/// The five QA skills every segment's question set covers.
const std::vector<std::string>& qa_skills();

// ---- stage 1: initial captions -------------------------------------------

std::vector<meta::DatasetRecord> synthesize_initial_captions(const std::vector<SegmentRef>& segments,
                                                             provider::Provider& provider,
                                                             const PipelineOptions& options);

// ---- stage 2: metadata extraction --------------------------------------

struct ExtractResult {
    std::string segment_id;
    meta::MusicMetadata metadata;
    std::vector<audio::ChordSegment> chords;
    std::vector<meta::StageAuditEntry> audit;
};

/// Deterministic extractors over the segment audio; extractor failures are
/// recorded in the audit and never abort the stage. The transcriber provider
/// is optional and fills `metadata.lyrics`.
std::vector<ExtractResult> extract_metadata(const std::vector<SegmentRef>& segments,
                                            const PipelineOptions& options,
                                            provider::Provider* transcriber = nullptr);

/// Seeded synthetic metadata for provider-only pipeline runs and tests
/// (no audio involved).
std::vector<ExtractResult> synthetic_extracts(const std::vector<SegmentRef>& segments,
                                              std::uint64_t seed);
std::vector<SegmentRef> synthetic_segments(int count);

// ---- stage 3: caption & QA creation -------------------------------------

struct CreateOutput {
    std::vector<meta::DatasetRecord> records;
    PipelineStats stats;  // mean_caption_words is the corpus statistic
};

CreateOutput create_caption_and_qa(const std::vector<SegmentRef>& segments,
                                   const std::vector<meta::DatasetRecord>& initial_captions,
                                   const std::vector<ExtractResult>& extracts,
                                   provider::Provider& provider, const PipelineOptions& options);

// ---- refinement of existing datasets -------------------------------------

/// Metadata-grounded caption rewrite. The rewritten text must contain the
/// metadata BPM and key verbatim; when the post-check fails the original
/// record is returned with a failed audit entry.
meta::DatasetRecord rewrite_caption(const meta::DatasetRecord& existing,
                                    const meta::MusicMetadata& metadata,
                                    provider::Provider& provider);

/// Distractor augmentation to at least 8 options; duplicates (case-
/// insensitive) and clones of the correct answer are dropped; options are
/// reshuffled with the seeded RNG and answer_index follows the answer.
meta::DatasetRecord augment_options(const meta::DatasetRecord& qa, provider::Provider& provider,
                                    std::uint64_t seed);

// ---- stage 4: quality filtering ------------------------------------------

struct FilterOutput {
    std::vector<meta::DatasetRecord> records;
    PipelineStats stats;
};

/// Verifier thumbs-up/down per record; rejected records are dropped, records
/// with unparseable verdicts are kept and flagged for manual review.
FilterOutput quality_filter(const std::vector<meta::DatasetRecord>& records,
                            provider::Provider& provider, const PipelineOptions& options);

/// Difficulty probe; records judged challenging are kept.
std::vector<meta::DatasetRecord> select_hard_examples(const std::vector<meta::DatasetRecord>& records,
                                                      provider::Provider& provider,
                                                      const PipelineOptions& options);

// ---- CoT construction ------------------------------------------------

enum class Disposition { kept, rewritten, discarded };

const char* disposition_name(Disposition d);

/// Pure disposition rule over the step fail fraction f:
/// f = 0 -> kept; 0 < f <= 0.30 -> rewritten; f > 0.30 -> discarded.
Disposition think_disposition(double fail_fraction);

struct CotRecord {
    meta::DatasetRecord base;
    std::vector<std::string> steps;
    std::vector<bool> step_verdicts;  // aligned with steps (post-rewrite state)
    double fail_fraction = 0.0;       // from the original verification pass
    Disposition disposition = Disposition::kept;
};

/// Sentence-boundary step segmentation used for CoT verification.
std::vector<std::string> split_steps(const std::string& chain);

/// The instruction wrapped around CoT prompts, verbatim.
extern const char* kThinkInstruction;

/// Generate a reasoning chain per record, verify each step, rewrite chains
/// with a minor (<= 30%) fail fraction once, and discard the rest. Prompts of
/// surviving records are wrapped with the think/answer instruction.
std::vector<CotRecord> build_think(const std::vector<meta::DatasetRecord>& records,
                                   provider::Provider& provider, const PipelineOptions& options);

} // namespace cadenza::pipeline
