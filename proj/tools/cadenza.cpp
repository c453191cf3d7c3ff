#include "cadenza/audio.hpp"
#include "cadenza/errors.hpp"
#include "cadenza/grpo.hpp"
#include "cadenza/metadata.hpp"
#include "cadenza/pipeline.hpp"
#include "cadenza/provider.hpp"
#include "cadenza/rewards.hpp"
#include "cadenza/synth.hpp"
#include "cadenza/tagtask.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace cadenza;

namespace {

// ---- config file handling -------------------------------------------------

/// Expand `--config FILE` (key=value lines, # comments) into option tokens
/// inserted before the user's flags, so explicit flags win (TakeLast).
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::vector<std::string> out;
    std::vector<std::string> config_tokens;
    std::size_t insert_at = std::string::npos;

    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw InvalidArgument("--config needs a file path");
            std::ifstream in(args[i + 1]);
            if (!in) throw IoError("cannot open config file " + args[i + 1]);
            std::string line;
            while (std::getline(in, line)) {
                const std::size_t hash = line.find('#');
                if (hash != std::string::npos) line = line.substr(0, hash);
                const std::size_t eq = line.find('=');
                if (eq == std::string::npos) continue;
                auto strip = [](std::string s) {
                    const auto a = s.find_first_not_of(" \t\r");
                    if (a == std::string::npos) return std::string{};
                    const auto b = s.find_last_not_of(" \t\r");
                    return s.substr(a, b - a + 1);
                };
                const std::string key = strip(line.substr(0, eq));
                const std::string value = strip(line.substr(eq + 1));
                if (key.empty()) continue;
                // single --key=value token, so plain flags work from config too
                config_tokens.push_back("--" + key + "=" + value);
            }
            if (insert_at == std::string::npos) insert_at = out.size();
            ++i;  // skip the path
            continue;
        }
        out.push_back(args[i]);
    }
    if (insert_at != std::string::npos)
        out.insert(out.begin() + static_cast<std::ptrdiff_t>(insert_at), config_tokens.begin(),
                   config_tokens.end());
    return out;
}

void log_resolved_config(const CLI::App& app, const std::string& out_dir) {
    const std::string resolved = app.config_to_str(true, false);
    std::cerr << "[config] subcommand=" << app.get_name() << "\n" << resolved;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream f(fs::path(out_dir) / "config.resolved.txt");
        f << "# " << app.get_name() << "\n" << resolved;
    }
}

// ---- provider wiring --------------------------------------------------

struct ProviderFlags {
    std::string kind = "mock";
    std::string url;
    std::string auth_env = "CADENZA_PROVIDER_TOKEN";
    std::uint64_t seed = 7;
    std::string approve_token;
    std::string reject_token;
    std::string cache_dir;
    double backoff_base = 1.0;
    int max_in_flight = 4;
};

void add_provider_flags(CLI::App* sub, ProviderFlags& flags) {
    sub->add_option("--provider", flags.kind, "Provider backend: mock | http")
        ->check(CLI::IsMember({"mock", "http"}));
    sub->add_option("--provider-url", flags.url, "HTTP provider endpoint (http://host:port/path)");
    sub->add_option("--provider-auth-env", flags.auth_env,
                    "Environment variable holding the bearer token");
    sub->add_option("--provider-seed", flags.seed, "Mock provider seed");
    sub->add_option("--approve-token", flags.approve_token,
                    "Mock verifier: answer yes iff the prompt contains this token");
    sub->add_option("--reject-token", flags.reject_token,
                    "Mock verifier: answer no iff the prompt contains this token");
    sub->add_option("--cache-dir", flags.cache_dir,
                    "Response cache directory (defaults to <out>/provider_cache)");
    sub->add_option("--backoff-base", flags.backoff_base, "HTTP retry backoff base seconds");
    sub->add_option("--provider-max-inflight", flags.max_in_flight,
                    "Maximum concurrent requests to the provider");
}

std::shared_ptr<provider::Provider> make_provider(const ProviderFlags& flags,
                                                  const std::string& out_dir) {
    std::shared_ptr<provider::Provider> inner;
    if (flags.kind == "http") {
        provider::HttpConfig cfg;
        cfg.url = flags.url;
        cfg.auth_token_env = flags.auth_env;
        cfg.backoff_base_sec = flags.backoff_base;
        if (cfg.url.empty()) throw InvalidArgument("--provider-url required for --provider http");
        inner = std::make_shared<provider::HttpProvider>(cfg);
    } else {
        provider::MockConfig cfg;
        cfg.seed = flags.seed;
        cfg.approve_token = flags.approve_token;
        cfg.reject_token = flags.reject_token;
        inner = std::make_shared<provider::MockProvider>(cfg);
    }
    std::string cache = flags.cache_dir;
    if (cache.empty() && !out_dir.empty()) cache = (fs::path(out_dir) / "provider_cache").string();
    return std::make_shared<provider::CachingProvider>(inner, cache, flags.max_in_flight);
}

// ---- shared record / extract io -----------------------------------------

std::vector<meta::DatasetRecord> load_records_any(const std::string& path) {
    if (path.size() > 14 && path.substr(path.size() - 14) == ".manifest.json") {
        const auto manifest = meta::read_manifest(path);
        return meta::read_shards(manifest, fs::path(path).parent_path().string());
    }
    return meta::load_records_file(path);
}

void write_stage_output(const std::vector<meta::DatasetRecord>& records,
                        const std::string& out_dir, const std::string& stem) {
    meta::write_shards(records, out_dir, stem, 1000);
    std::cerr << "[" << stem << "] wrote " << records.size() << " records to " << out_dir << "\n";
}

void save_extracts(const std::vector<pipeline::ExtractResult>& extracts, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& e : extracts) {
        nlohmann::ordered_json j;
        j["segment_id"] = e.segment_id;
        j["metadata"] = nlohmann::ordered_json::parse(meta::serialize_metadata_json(e.metadata));
        if (!e.chords.empty()) {
            j["chords"] = nlohmann::ordered_json::array();
            for (const auto& c : e.chords)
                j["chords"].push_back(
                    {{"label", c.label}, {"start_sec", c.start_sec}, {"end_sec", c.end_sec}});
        }
        j["audit"] = nlohmann::ordered_json::array();
        for (const auto& a : e.audit)
            j["audit"].push_back({{"stage", a.stage}, {"passed", a.passed}, {"note", a.note}});
        out << j.dump() << '\n';
    }
}

std::vector<pipeline::ExtractResult> load_extracts(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<pipeline::ExtractResult> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        pipeline::ExtractResult e;
        e.segment_id = j.at("segment_id").get<std::string>();
        e.metadata = meta::parse_metadata_json(j.at("metadata").dump());
        if (j.contains("chords")) {
            for (const auto& c : j["chords"])
                e.chords.push_back({c.at("label").get<std::string>(),
                                    c.at("start_sec").get<double>(),
                                    c.at("end_sec").get<double>()});
        }
        if (j.contains("audit")) {
            for (const auto& a : j["audit"])
                e.audit.push_back({a.at("stage").get<std::string>(), a.at("passed").get<bool>(),
                                   a.value("note", std::string{})});
        }
        out.push_back(std::move(e));
    }
    return out;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"music-understanding post-training toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Print the full flag reference for every subcommand");

    // every subcommand gets these
    struct Common {
        std::uint64_t seed = 0;
        int workers = static_cast<int>(std::thread::hardware_concurrency());
        int batch_size = 64;
        std::string out_dir;
    };

    const auto add_common = [](CLI::App* sub, Common& c, bool out_required = true) {
        sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        sub->add_option("--seed", c.seed, "Run seed");
        sub->add_option("--workers", c.workers, "Worker threads for record-parallel stages");
        sub->add_option("--batch-size", c.batch_size, "Checkpoint batch size");
        auto* out = sub->add_option("--out", c.out_dir, "Output directory");
        if (out_required) out->required();
    };

    // demo-corpus --------------------------------------------------------
    auto* demo = app.add_subcommand("demo-corpus", "Synthesize the bundled toy audio set");
    Common demo_c;
    add_common(demo, demo_c);
    demo->callback([&] {
        log_resolved_config(*demo, demo_c.out_dir);
        fs::create_directories(demo_c.out_dir);
        const auto items = synth::demo_corpus(demo_c.seed == 0 ? 7 : demo_c.seed);
        std::vector<pipeline::SegmentRef> segments;
        std::ofstream clips(fs::path(demo_c.out_dir) / "clips.jsonl", std::ios::binary);
        for (const auto& item : items) {
            const std::string rel = item.name + ".wav";
            audio::save_wav(item.clip, (fs::path(demo_c.out_dir) / rel).string());
            nlohmann::ordered_json j;
            j["clip_id"] = item.name;
            j["path"] = rel;
            if (item.bpm > 0) j["bpm"] = item.bpm;
            if (!item.key.empty()) j["key"] = item.key;
            if (!item.meter.empty()) j["meter"] = item.meter;
            clips << j.dump() << '\n';

            pipeline::SegmentRef s;
            s.segment_id = item.name;
            s.clip_id = item.name;
            s.path = (fs::path(demo_c.out_dir) / rel).string();
            s.duration_sec = item.clip.duration_sec();
            segments.push_back(std::move(s));
        }
        pipeline::write_segment_manifest(segments,
                                         (fs::path(demo_c.out_dir) / "segments.jsonl").string());
        std::cerr << "[demo-corpus] wrote " << items.size() << " clips\n";
    });

    // segment -----------------------------------------------------------
    auto* seg = app.add_subcommand("segment", "Split audio into hop-spaced windows");
    Common seg_c;
    std::string seg_in, seg_clip_id;
    double seg_window = 30.0, seg_hop = 30.0;
    add_common(seg, seg_c);
    seg->add_option("--in", seg_in, "Input WAV file")->required();
    seg->add_option("--window", seg_window, "Window length in seconds");
    seg->add_option("--hop", seg_hop, "Hop in seconds");
    seg->add_option("--clip-id", seg_clip_id, "Clip id (defaults to the file stem)");
    seg->callback([&] {
        log_resolved_config(*seg, seg_c.out_dir);
        fs::create_directories(seg_c.out_dir);
        const std::string clip_id =
            seg_clip_id.empty() ? fs::path(seg_in).stem().string() : seg_clip_id;
        const auto clip = audio::load_wav(seg_in);
        const auto windows = audio::segment(clip, seg_window, seg_hop);
        std::vector<pipeline::SegmentRef> segments;
        for (std::size_t i = 0; i < windows.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "%s-%04zu.wav", clip_id.c_str(), i);
            audio::save_wav(windows[i], (fs::path(seg_c.out_dir) / name).string());
            pipeline::SegmentRef s;
            s.segment_id = clip_id + "-" + std::to_string(i);
            s.clip_id = clip_id;
            s.path = (fs::path(seg_c.out_dir) / name).string();
            s.offset_sec = windows[i].start_sec;
            s.duration_sec = windows[i].duration_sec();
            segments.push_back(std::move(s));
        }
        pipeline::write_segment_manifest(segments,
                                         (fs::path(seg_c.out_dir) / "segments.jsonl").string());
        std::cerr << "[segment] " << windows.size() << " segments\n";
    });

    // extract -----------------------------------------------------------
    auto* ext = app.add_subcommand("extract", "Run the deterministic MIR extractors");
    Common ext_c;
    std::string ext_in, ext_segments, ext_out_file;
    ProviderFlags ext_provider;
    bool ext_transcribe = false;
    ext->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    ext->add_option("--in", ext_in, "Single WAV treated as one segment");
    ext->add_option("--segments", ext_segments, "Segment manifest JSONL");
    ext->add_option("--out", ext_out_file, "Output extracts JSONL")->required();
    ext->add_option("--seed", ext_c.seed, "Run seed");
    ext->add_option("--workers", ext_c.workers, "Worker threads");
    ext->add_flag("--transcribe", ext_transcribe, "Also run the transcriber provider for lyrics");
    add_provider_flags(ext, ext_provider);
    ext->callback([&] {
        log_resolved_config(*ext, "");
        std::vector<pipeline::SegmentRef> segments;
        if (!ext_segments.empty()) {
            segments = pipeline::read_segment_manifest(ext_segments);
        } else if (!ext_in.empty()) {
            pipeline::SegmentRef s;
            s.segment_id = fs::path(ext_in).stem().string();
            s.clip_id = s.segment_id;
            s.path = ext_in;
            segments.push_back(std::move(s));
        } else {
            throw InvalidArgument("extract needs --in or --segments");
        }
        pipeline::PipelineOptions options;
        options.seed = ext_c.seed;
        options.workers = ext_c.workers;
        std::shared_ptr<provider::Provider> transcriber;
        if (ext_transcribe) transcriber = make_provider(ext_provider, "");
        const auto extracts = pipeline::extract_metadata(segments, options, transcriber.get());
        save_extracts(extracts, ext_out_file);
        std::cerr << "[extract] " << extracts.size() << " segments -> " << ext_out_file << "\n";
    });

    // synthesize ---------------------------------------------------------
    auto* syn = app.add_subcommand("synthesize", "Stage 1: initial surface-level captions");
    Common syn_c;
    std::string syn_segments;
    ProviderFlags syn_provider;
    add_common(syn, syn_c);
    syn->add_option("--segments", syn_segments, "Segment manifest JSONL")->required();
    add_provider_flags(syn, syn_provider);
    syn->callback([&] {
        log_resolved_config(*syn, syn_c.out_dir);
        const auto segments = pipeline::read_segment_manifest(syn_segments);
        pipeline::PipelineOptions options{syn_c.seed, syn_c.out_dir, syn_c.batch_size,
                                          syn_c.workers};
        auto provider = make_provider(syn_provider, syn_c.out_dir);
        const auto records = pipeline::synthesize_initial_captions(segments, *provider, options);
        write_stage_output(records, syn_c.out_dir, "synthesize");
    });

    // create ------------------------------------------------------------
    auto* cre = app.add_subcommand("create", "Stage 3: detailed captions + skill QAs");
    Common cre_c;
    std::string cre_segments, cre_captions, cre_extracts;
    ProviderFlags cre_provider;
    add_common(cre, cre_c);
    cre->add_option("--segments", cre_segments, "Segment manifest JSONL")->required();
    cre->add_option("--captions", cre_captions, "Stage-1 records (jsonl or manifest)")->required();
    cre->add_option("--extracts", cre_extracts, "Extractor output JSONL")->required();
    add_provider_flags(cre, cre_provider);
    cre->callback([&] {
        log_resolved_config(*cre, cre_c.out_dir);
        const auto segments = pipeline::read_segment_manifest(cre_segments);
        const auto captions = load_records_any(cre_captions);
        const auto extracts = load_extracts(cre_extracts);
        pipeline::PipelineOptions options{cre_c.seed, cre_c.out_dir, cre_c.batch_size,
                                          cre_c.workers};
        auto provider = make_provider(cre_provider, cre_c.out_dir);
        const auto result =
            pipeline::create_caption_and_qa(segments, captions, extracts, *provider, options);
        write_stage_output(result.records, cre_c.out_dir, "create");
        nlohmann::ordered_json stats;
        stats["mean_caption_words"] = result.stats.mean_caption_words;
        stats["records"] = result.stats.kept;
        std::ofstream metrics(fs::path(cre_c.out_dir) / "create.metrics.jsonl", std::ios::binary);
        metrics << stats.dump() << '\n';
        std::cerr << "[create] mean caption words: " << result.stats.mean_caption_words << "\n";
    });

    // rewrite ------------------------------------------------------------
    auto* rew = app.add_subcommand("rewrite", "Metadata-grounded caption rewriting");
    Common rew_c;
    std::string rew_data, rew_extracts;
    ProviderFlags rew_provider;
    add_common(rew, rew_c);
    rew->add_option("--data", rew_data, "Caption records (jsonl or manifest)")->required();
    rew->add_option("--extracts", rew_extracts, "Extractor output JSONL")->required();
    add_provider_flags(rew, rew_provider);
    rew->callback([&] {
        log_resolved_config(*rew, rew_c.out_dir);
        auto records = load_records_any(rew_data);
        const auto extracts = load_extracts(rew_extracts);
        std::map<std::string, const pipeline::ExtractResult*> by_segment;
        for (const auto& e : extracts) by_segment[e.segment_id] = &e;
        auto provider = make_provider(rew_provider, rew_c.out_dir);
        std::vector<meta::DatasetRecord> out;
        for (const auto& r : records) {
            const std::string seg_id = r.record_id.substr(0, r.record_id.find('/'));
            const auto it = by_segment.find(seg_id);
            if (it == by_segment.end() || r.kind != meta::RecordKind::caption) {
                out.push_back(r);
                continue;
            }
            out.push_back(pipeline::rewrite_caption(r, it->second->metadata, *provider));
        }
        write_stage_output(out, rew_c.out_dir, "rewrite");
    });

    // augment ------------------------------------------------------------
    auto* aug = app.add_subcommand("augment", "Distractor augmentation for MCQ records");
    Common aug_c;
    std::string aug_data;
    ProviderFlags aug_provider;
    add_common(aug, aug_c);
    aug->add_option("--data", aug_data, "QA records (jsonl or manifest)")->required();
    add_provider_flags(aug, aug_provider);
    aug->callback([&] {
        log_resolved_config(*aug, aug_c.out_dir);
        auto records = load_records_any(aug_data);
        auto provider = make_provider(aug_provider, aug_c.out_dir);
        std::vector<meta::DatasetRecord> out;
        for (const auto& r : records) {
            if (r.kind == meta::RecordKind::qa && r.options.size() >= 2)
                out.push_back(pipeline::augment_options(r, *provider, aug_c.seed));
            else
                out.push_back(r);
        }
        write_stage_output(out, aug_c.out_dir, "augment");
    });

    // filter -------------------------------------------------------------
    auto* fil = app.add_subcommand("filter", "Stage 4: verifier-based quality filtering");
    Common fil_c;
    std::string fil_data;
    ProviderFlags fil_provider;
    add_common(fil, fil_c);
    fil->add_option("--data", fil_data, "Records to filter (jsonl or manifest)")->required();
    add_provider_flags(fil, fil_provider);
    fil->callback([&] {
        log_resolved_config(*fil, fil_c.out_dir);
        const auto records = load_records_any(fil_data);
        pipeline::PipelineOptions options{fil_c.seed, fil_c.out_dir, fil_c.batch_size,
                                          fil_c.workers};
        auto provider = make_provider(fil_provider, fil_c.out_dir);
        const auto result = pipeline::quality_filter(records, *provider, options);
        write_stage_output(result.records, fil_c.out_dir, "filter");
        std::cerr << "[filter] drop rate: " << result.stats.drop_rate << " (" << result.stats.dropped
                  << "/" << records.size() << ")\n";
    });

    // think --------------------------------------------------------------
    auto* thk = app.add_subcommand("think", "Hard-example CoT construction and verification");
    Common thk_c;
    std::string thk_data;
    bool thk_skip_hard = false;
    ProviderFlags thk_provider;
    add_common(thk, thk_c);
    thk->add_option("--data", thk_data, "Records (jsonl or manifest)")->required();
    thk->add_flag("--skip-hard", thk_skip_hard, "Skip the difficulty probe subsampling");
    add_provider_flags(thk, thk_provider);
    thk->callback([&] {
        log_resolved_config(*thk, thk_c.out_dir);
        auto records = load_records_any(thk_data);
        pipeline::PipelineOptions options{thk_c.seed, thk_c.out_dir, thk_c.batch_size,
                                          thk_c.workers};
        auto provider = make_provider(thk_provider, thk_c.out_dir);
        if (!thk_skip_hard) records = pipeline::select_hard_examples(records, *provider, options);
        const auto cots = pipeline::build_think(records, *provider, options);

        std::vector<meta::DatasetRecord> kept;
        std::ofstream audit(fs::path(thk_c.out_dir) / "think.audit.jsonl", std::ios::binary);
        std::size_t discarded = 0;
        for (const auto& cot : cots) {
            nlohmann::ordered_json j;
            j["record_id"] = cot.base.record_id;
            j["disposition"] = pipeline::disposition_name(cot.disposition);
            j["fail_fraction"] = cot.fail_fraction;
            j["steps"] = cot.steps;
            audit << j.dump() << '\n';
            if (cot.disposition == pipeline::Disposition::discarded) {
                ++discarded;
                continue;
            }
            kept.push_back(cot.base);
        }
        write_stage_output(kept, thk_c.out_dir, "think");
        std::cerr << "[think] kept " << kept.size() << ", discarded " << discarded << "\n";
    });

    // score ---------------------------------------------------------------
    auto* sco = app.add_subcommand("score", "Batch reward scoring of predictions");
    std::string sco_pred, sco_data, sco_out;
    sco->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sco->add_option("--pred", sco_pred, "Predictions JSONL ({record_id, output})")->required();
    sco->add_option("--data", sco_data, "Dataset records (jsonl or manifest)")->required();
    sco->add_option("--out", sco_out, "Output rewards JSONL")->required();
    sco->callback([&] {
        log_resolved_config(*sco, "");
        const auto records = load_records_any(sco_data);
        std::map<std::string, const meta::DatasetRecord*> by_id;
        for (const auto& r : records) by_id[r.record_id] = &r;

        std::ifstream pred(sco_pred, std::ios::binary);
        if (!pred) throw IoError("cannot open " + sco_pred);
        std::ofstream out(sco_out, std::ios::binary);
        if (!out) throw IoError("cannot write " + sco_out);

        std::string line;
        while (std::getline(pred, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            const std::string id = j.at("record_id").get<std::string>();
            const std::string output = j.at("output").get<std::string>();
            const auto it = by_id.find(id);
            if (it == by_id.end()) throw ValidationError("prediction for unknown record " + id);
            const meta::DatasetRecord& r = *it->second;

            rewards::Task task;
            if (r.kind == meta::RecordKind::qa || r.kind == meta::RecordKind::cot_qa) {
                task = rewards::QaTask{r.target};
            } else {
                if (r.metadata.populated_category_count() == 0)
                    throw ValidationError("caption record " + id +
                                          " has no metadata categories to score against");
                task = rewards::CaptionTask{r.metadata};
            }
            const auto breakdown = rewards::total_reward(output, task);

            nlohmann::ordered_json o;
            o["record_id"] = id;
            o["format"] = breakdown.format;
            if (breakdown.accuracy) o["accuracy"] = *breakdown.accuracy;
            if (breakdown.structured) o["structured"] = *breakdown.structured;
            o["total"] = breakdown.total;
            out << o.dump() << '\n';
        }
        std::cerr << "[score] wrote " << sco_out << "\n";
    });

    // train-grpo ---------------------------------------------------------
    auto* trn = app.add_subcommand("train-grpo", "GRPO on the tag-grammar toy task");
    Common trn_c;
    tagtask::TrainConfig train_cfg;
    train_cfg.grpo.iterations = 300;
    add_common(trn, trn_c);
    trn->add_option("--steps", train_cfg.grpo.iterations, "GRPO steps");
    trn->add_option("--group-size", train_cfg.grpo.group_size, "Completions per prompt (G)");
    trn->add_option("--lr", train_cfg.grpo.learning_rate, "Learning rate");
    trn->add_option("--clip", train_cfg.grpo.clip, "Importance ratio clip (epsilon)");
    trn->add_option("--kl", train_cfg.grpo.kl_coeff, "KL penalty coefficient (beta)");
    trn->add_option("--warmup-steps", train_cfg.warmup_steps, "Skeleton warm-up MLE steps");
    trn->add_option("--warmup-lr", train_cfg.warmup_learning_rate, "Warm-up learning rate");
    trn->add_option("--prompts-per-step", train_cfg.prompts_per_step, "Groups per GRPO step");
    trn->add_option("--eval-groups", train_cfg.eval_groups, "Groups in the final evaluation");
    trn->add_flag("--sequence-ratio", train_cfg.grpo.sequence_ratio,
                  "Use one sequence-level importance ratio (ablation)");
    trn->callback([&] {
        log_resolved_config(*trn, trn_c.out_dir);
        fs::create_directories(trn_c.out_dir);
        train_cfg.grpo.seed = trn_c.seed;
        train_cfg.grpo.workers = trn_c.workers;

        const auto task = tagtask::make_tag_task();
        const auto result = tagtask::train(task, train_cfg);

        std::ofstream metrics(fs::path(trn_c.out_dir) / "metrics.jsonl", std::ios::binary);
        for (std::size_t i = 0; i < result.steps.size(); ++i) {
            const auto& s = result.steps[i];
            nlohmann::ordered_json j;
            j["step"] = i;
            j["mean_reward"] = s.mean_reward;
            j["loss"] = s.loss;
            j["grad_norm"] = s.grad_norm;
            j["kl"] = s.kl;
            j["skipped"] = s.skipped;
            metrics << j.dump() << '\n';
        }
        nlohmann::ordered_json fin;
        fin["final_mean_reward"] = result.final_mean_reward;
        metrics << fin.dump() << '\n';

        policy::save_params(task.spec, result.params,
                            (fs::path(trn_c.out_dir) / "policy.bin").string());
        std::cerr << "[train-grpo] final mean reward: " << result.final_mean_reward << "\n";
    });

    // check-gradients ------------------------------------------------------
    auto* chk = app.add_subcommand("check-gradients", "Finite-difference validation of the GRPO gradient");
    int chk_cases = 20;
    std::uint64_t chk_seed = 1;
    double chk_h = 1e-4;
    chk->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    chk->add_option("--cases", chk_cases, "Number of seeded instances");
    chk->add_option("--seed", chk_seed, "Base seed");
    chk->add_option("--fd-step", chk_h, "Finite-difference step");
    chk->callback([&] {
        log_resolved_config(*chk, "");
        const auto results = grpo::gradient_check_suite(chk_cases, chk_seed, chk_h);
        double max_err = 0.0;
        for (std::size_t i = 0; i < results.size(); ++i) {
            std::cerr << "case " << i << ": max rel err " << results[i].max_rel_err
                      << (results[i].beta > 0 ? " (beta>0)" : "")
                      << (results[i].clipped_regime ? " (clipped)" : "") << "\n";
            max_err = std::max(max_err, results[i].max_rel_err);
        }
        std::cout << "max relative error: " << max_err << "\n";
        if (max_err >= 1e-4) throw NumericalError("gradient check failed");
    });

    try {
        const auto args = expand_config(argc, argv);
        std::vector<const char*> argv2;
        argv2.push_back(argc > 0 ? argv[0] : "cadenza");
        for (const auto& a : args) argv2.push_back(a.c_str());
        app.parse(static_cast<int>(argv2.size()), argv2.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            app.exit(e);
            return 0;
        }
        std::cerr << "usage error: " << e.what() << "\n";
        std::cerr << app.help() << "\n";
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const Error& e) {
        std::cerr << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
