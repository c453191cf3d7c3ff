#include "cadenza/metadata.hpp"

#include "cadenza/errors.hpp"
#include "cadenza/rng.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace cadenza;
using meta::DatasetRecord;
using meta::MusicMetadata;
using meta::RecordKind;

namespace {

// the structured-metadata example record, in the brace category:value format
const char* kAmericanaBox =
    "{\"Genre\": Americana, \"BPM\": 125, \"Key\": G minor, \"Meter\": 4/4, "
    "\"Structure\": Intro, Verse, Verse, Bridge, Solo, Chorus, Outro, "
    "\"Instruments\": fingerstyle acoustic guitar, banjo, mandolin, spoken-word voice, "
    "\"Vocal Character\": male spoken-word, deep resonant timbre, clear/deliberate, light reverb, "
    "\"Lyric Themes\": forgiveness, humility, spiritual prayer, desert frontier, betrayal, outlaw "
    "narrative, "
    "\"Theory\": G minor center; modal interchange with relative major; F#aug -> Eb6 -> D7 "
    "resolution; Gmaj7/G7 brighten prayer sections, "
    "\"Mix Notes\": high-fidelity organic; wide natural stereo panning; minimal reverb; warm, "
    "clear, light compression; close-mic intimacy, "
    "\"Dynamics\": bridge increases harmonic rhythm/urgency.}";

DatasetRecord sample_caption_record() {
    DatasetRecord r;
    r.record_id = "seg0/cap1";
    r.kind = RecordKind::caption;
    r.audio_path = "seg0.wav";
    r.prompt = "Describe the music.";
    r.target = "A slow waltz in A minor.";
    r.metadata.bpm = 90.0;
    r.metadata.key = "A minor";
    r.stage_audit.push_back({"create", true, ""});
    return r;
}

MusicMetadata random_metadata(Rng& rng) {
    MusicMetadata m;
    static const char* genres[] = {"Americana", "House", "Bebop"};
    if (rng.uniform01() < 0.8) m.genre = genres[rng.uniform_int(0, 2)];
    if (rng.uniform01() < 0.8) m.bpm = 40.0 + rng.uniform01() * 200.0;
    if (rng.uniform01() < 0.8) m.key = rng.uniform01() < 0.5 ? "C major" : "F# minor";
    if (rng.uniform01() < 0.5) m.meter = "4/4";
    if (rng.uniform01() < 0.5) m.structure = {"Intro", "Verse", "Chorus"};
    if (rng.uniform01() < 0.5) m.instruments = {"piano", "upright bass"};
    if (rng.uniform01() < 0.3) m.vocal_character = {"breathy", "close-mic"};
    if (rng.uniform01() < 0.3) m.lyric_themes = {"rain", "trains"};
    if (rng.uniform01() < 0.3) m.theory = "ii-V-I movement";
    if (rng.uniform01() < 0.3) m.mix_notes = "dry and narrow";
    if (rng.uniform01() < 0.3) m.dynamics = "builds to the chorus";
    if (rng.uniform01() < 0.3) m.lyrics = "la la la";
    if (rng.uniform01() < 0.5) {
        m.source_clip_id = "clip" + std::to_string(rng.uniform_int(0, 99));
        m.source_offset_sec = 30.0 * static_cast<double>(rng.uniform_int(0, 7));
    }
    if (rng.uniform01() < 0.2) m.extras["Subgenre"] = "downtempo";
    if (!m.genre && !m.bpm) m.genre = "House";
    return m;
}

DatasetRecord random_record(Rng& rng, int index) {
    DatasetRecord r;
    r.record_id = "seg" + std::to_string(index) + "/r" + std::to_string(rng.uniform_int(0, 9));
    const int k = static_cast<int>(rng.uniform_int(0, 3));
    r.kind = static_cast<RecordKind>(k);
    r.audio_path = "clips/seg" + std::to_string(index) + ".wav";
    r.audio_offset_sec = 30.0 * static_cast<double>(rng.uniform_int(0, 7));
    r.prompt = "prompt " + std::to_string(rng.next_u64() % 1000);
    r.target = "target " + std::to_string(rng.next_u64() % 1000);
    if (r.kind == RecordKind::qa || r.kind == RecordKind::cot_qa) {
        const int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
        for (int i = 0; i < n; ++i) r.options.push_back("option " + std::to_string(i));
        r.answer_index = static_cast<int>(rng.uniform_int(0, n - 1));
        r.target = r.options[static_cast<std::size_t>(*r.answer_index)];
    }
    if (r.kind == RecordKind::cot_caption || r.kind == RecordKind::cot_qa)
        r.think = "First, listen. Then, conclude.";
    if (rng.uniform01() < 0.5) r.skill = "Temporal understanding";
    r.metadata = random_metadata(rng);
    if (rng.uniform01() < 0.7) r.stage_audit.push_back({"create", true, "note"});
    return r;
}

} // namespace

TEST_CASE("americana box parses with all 11 categories") {
    const auto m = meta::parse_metadata(kAmericanaBox);
    CHECK(m.populated_category_count() == 11);
    CHECK(m.bpm == 125.0);
    CHECK(*m.key == "G minor");
    CHECK(*m.meter == "4/4");
    CHECK(*m.genre == "Americana");
    CHECK(m.structure.size() == 7);
    CHECK(m.structure[0] == "Intro");
    CHECK(m.structure[6] == "Outro");
    CHECK(m.instruments.size() == 4);
    CHECK(m.vocal_character.size() == 4);
    CHECK(m.lyric_themes.size() == 6);
    CHECK(m.theory->find("G minor center") == 0);
}

TEST_CASE("empty and single-field metadata") {
    CHECK_THROWS_AS(meta::parse_metadata("{}"), EmptyRecord);
    const auto m = meta::parse_metadata("{\"BPM\": 90}");
    CHECK(m.populated_category_count() == 1);
    CHECK(m.bpm == 90.0);
}

TEST_CASE("metadata parse errors") {
    CHECK_THROWS_AS(meta::parse_metadata("\"BPM\": 90"), ParseError);
    CHECK_THROWS_AS(meta::parse_metadata("{\"BPM\": 90"), ParseError);
    // unknown categories land in extras and do not count as recognizable
    CHECK_THROWS_AS(meta::parse_metadata("{\"Subgenre\": shoegaze}"), EmptyRecord);
}

TEST_CASE("latex-style quoting and case-insensitive names") {
    const auto m = meta::parse_metadata("{``genre'': Americana, ``vocal_character'': airy, soft}");
    CHECK(*m.genre == "Americana");
    CHECK(m.vocal_character == std::vector<std::string>{"airy", "soft"});
}

TEST_CASE("bpm parses from leading digits") {
    const auto m = meta::parse_metadata("{\"BPM\": 125 BPM (moderate)}");
    CHECK(m.bpm == 125.0);
}

TEST_CASE("serialize errors name the field") {
    auto r = sample_caption_record();
    r.kind = RecordKind::qa;
    r.options = {"a", "b"};
    r.answer_index = 5;
    try {
        (void)meta::serialize_record(r);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("answer_index") != std::string::npos);
    }

    auto r2 = sample_caption_record();
    r2.target.clear();
    CHECK_THROWS_AS((void)meta::serialize_record(r2), ValidationError);
}

TEST_CASE("single record round trip") {
    const auto r = sample_caption_record();
    const auto line = meta::serialize_record(r);
    CHECK(meta::parse_record(line) == r);
    CHECK(meta::serialize_records({}) == "");
}

TEST_CASE("round trip property over generated records") {
    Rng rng(2024);
    for (int i = 0; i < 500; ++i) {
        const auto r = random_record(rng, i);
        const auto line = meta::serialize_record(r);
        const auto back = meta::parse_record(line);
        REQUIRE(back == r);
        // category set is closed: a second serialization is identical
        REQUIRE(meta::serialize_record(back) == line);
    }
}

TEST_CASE("shards and manifest round trip with content hashes") {
    Rng rng(7);
    std::vector<DatasetRecord> records;
    for (int i = 0; i < 25; ++i) records.push_back(random_record(rng, i));

    const auto dir = std::filesystem::temp_directory_path() / "cadenza_shards_test";
    std::filesystem::remove_all(dir);
    meta::Manifest manifest;
    meta::write_shards(records, dir.string(), "data", 10, &manifest);
    CHECK(manifest.shards.size() == 3);
    CHECK(manifest.shards[0].record_count == 10);
    CHECK(manifest.shards[2].record_count == 5);

    const auto loaded = meta::read_manifest((dir / "data.manifest.json").string());
    const auto back = meta::read_shards(loaded, dir.string());
    REQUIRE(back == records);

    // corruption is caught by the content hash
    {
        std::ofstream f(dir / "data-00001.jsonl", std::ios::binary | std::ios::app);
        f << "\n";
    }
    CHECK_THROWS_AS((void)meta::read_shards(loaded, dir.string()), ValidationError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("format_metadata renders the canonical category names") {
    const auto m = meta::parse_metadata(kAmericanaBox);
    const auto text = meta::format_metadata(m);
    for (const auto& name : meta::category_names())
        CHECK(text.find("\"" + name + "\"") != std::string::npos);
    // and the rendering re-parses to the same record
    CHECK(meta::parse_metadata(text) == m);
}
