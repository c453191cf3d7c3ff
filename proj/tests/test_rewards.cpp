#include "cadenza/rewards.hpp"

#include "cadenza/errors.hpp"
#include "cadenza/rng.hpp"

#include <doctest.h>

using namespace cadenza;

TEST_CASE("format reward accepts exactly the strict tag grammar") {
    CHECK(rewards::format_reward("<think>steps</think><answer>C major</answer>") == 1);
    CHECK(rewards::format_reward("  <think>s</think>\n<answer>x</answer>  ") == 1);
    CHECK(rewards::format_reward("<think>s</think>   <answer>x</answer>") == 1);

    // order swapped
    CHECK(rewards::format_reward("<answer>x</answer><think>y</think>") == 0);
    // empty bodies
    CHECK(rewards::format_reward("<think></think><answer>x</answer>") == 0);
    CHECK(rewards::format_reward("<think>y</think><answer></answer>") == 0);
    // text outside the tags
    CHECK(rewards::format_reward("hi <think>y</think><answer>x</answer>") == 0);
    CHECK(rewards::format_reward("<think>y</think><answer>x</answer> bye") == 0);
    CHECK(rewards::format_reward("<think>y</think>z<answer>x</answer>") == 0);
    // duplicated tags
    CHECK(rewards::format_reward("<think>a</think><think>b</think><answer>x</answer>") == 0);
    CHECK(rewards::format_reward("<think>a<answer>q</answer></think><answer>x</answer>") == 0);
    // missing pieces
    CHECK(rewards::format_reward("<think>a</think>") == 0);
    CHECK(rewards::format_reward("") == 0);
}

TEST_CASE("format reward is idempotent under whitespace padding") {
    const std::string ok = "<think>a</think><answer>b</answer>";
    CHECK(rewards::format_reward(ok) == rewards::format_reward("\n\t " + ok + " \r\n"));
    const std::string bad = "<think></think><answer>b</answer>";
    CHECK(rewards::format_reward(bad) == rewards::format_reward("  " + bad + "  "));
}

TEST_CASE("extract_answer returns the body verbatim") {
    CHECK(rewards::extract_answer("<think>t</think><answer> B </answer>") == " B ");
    CHECK(rewards::extract_answer("<think>t</think><answer><b>x</b></answer>") == "<b>x</b>");
    CHECK_THROWS_AS((void)rewards::extract_answer("<answer>x</answer>"), ExtractionError);
}

TEST_CASE("accuracy reward normalizes both sides") {
    CHECK(rewards::accuracy_reward("C Major", "c major") == 1);
    CHECK(rewards::accuracy_reward("  c   major.", "C MAJOR") == 1);
    CHECK(rewards::accuracy_reward("Jazz", "Classical") == 0);
    CHECK(rewards::accuracy_reward("c major!?", "C major") == 1);
    CHECK(rewards::accuracy_reward("", "") == 0);
}

TEST_CASE("mcq letter rule: only the gold letter scores") {
    const std::string gold = "(B) Classical";
    CHECK(rewards::accuracy_reward("B", gold) == 1);
    CHECK(rewards::accuracy_reward("b", gold) == 1);
    CHECK(rewards::accuracy_reward("(B) Classical", gold) == 1);
    for (char c = 'A'; c <= 'J'; ++c) {
        if (c == 'B') continue;
        CHECK(rewards::accuracy_reward(std::string(1, c), gold) == 0);
    }
    // the rule is one-directional: letter gold does not match option predictions
    CHECK(rewards::accuracy_reward("(B) Classical", "B") == 0);
}

TEST_CASE("structured reward on single and split categories") {
    meta::MusicMetadata one;
    one.key = "G minor";
    CHECK(rewards::structured_thinking_reward("a piece in g minor throughout", one) ==
          doctest::Approx(1.0));
    CHECK(rewards::structured_thinking_reward("a piece in g major", one) == doctest::Approx(0.5));
    CHECK(rewards::structured_thinking_reward("nothing relevant", one) == doctest::Approx(0.0));

    // 10 populated categories, 5 fully matched, 5 fully unmatched -> 0.5
    meta::MusicMetadata m;
    m.genre = "Americana";
    m.bpm = 125;
    m.key = "Gsharp";  // single token so full match is easy
    m.meter = "waltz";
    m.structure = {"intro"};
    m.instruments = {"banjo"};
    m.vocal_character = {"gravelly"};
    m.lyric_themes = {"trains"};
    m.theory = "plagal";
    m.mix_notes = "roomy";
    const std::string caption = "americana 125 gsharp waltz intro";  // first five only
    CHECK(m.populated_categories().size() == 10);
    CHECK(rewards::structured_thinking_reward(caption, m) == doctest::Approx(0.5));

    meta::MusicMetadata empty;
    CHECK_THROWS_AS((void)rewards::structured_thinking_reward("x", empty), InvalidArgument);
}

TEST_CASE("structured reward: bpm matches only the verbatim integer") {
    meta::MusicMetadata m;
    m.bpm = 125;
    CHECK(rewards::structured_thinking_reward("around 125 bpm", m) == doctest::Approx(1.0));
    CHECK(rewards::structured_thinking_reward("around 126 bpm", m) == doctest::Approx(0.0));
    CHECK(rewards::structured_thinking_reward("around 1250 bpm", m) == doctest::Approx(0.0));
}

TEST_CASE("structured reward monotonicity") {
    meta::MusicMetadata m;
    m.genre = "Americana";
    m.key = "G minor";
    m.instruments = {"banjo", "mandolin"};

    Rng rng(11);
    const std::vector<std::string> matched = {"americana", "banjo", "minor", "g", "mandolin"};
    const std::vector<std::string> unmatched = {"umbrella", "quartz", "veranda"};
    std::string caption = "opening words";
    double last = rewards::structured_thinking_reward(caption, m);
    for (int i = 0; i < 60; ++i) {
        if (rng.uniform01() < 0.5) {
            caption += " " + matched[static_cast<std::size_t>(rng.uniform_int(0, 4))];
            const double now = rewards::structured_thinking_reward(caption, m);
            CHECK(now >= last - 1e-12);  // appending matched words never decreases
            last = now;
        } else {
            caption += " " + unmatched[static_cast<std::size_t>(rng.uniform_int(0, 2))];
            const double now = rewards::structured_thinking_reward(caption, m);
            CHECK(now == doctest::Approx(last));  // unmatched words never change it
            last = now;
        }
    }
}

TEST_CASE("rewards stay in range on arbitrary inputs") {
    Rng rng(5);
    meta::MusicMetadata m;
    m.genre = "Bebop";
    m.bpm = 180;
    const auto random_text = [&] {
        std::string s;
        const int n = static_cast<int>(rng.uniform_int(0, 60));
        for (int i = 0; i < n; ++i) s += static_cast<char>(rng.uniform_int(32, 126));
        return s;
    };
    for (int i = 0; i < 300; ++i) {
        const std::string text = random_text();
        const int f = rewards::format_reward(text);
        CHECK((f == 0 || f == 1));
        const double s = rewards::structured_thinking_reward(text, m);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        const int a = rewards::accuracy_reward(text, random_text());
        CHECK((a == 0 || a == 1));
    }
}

TEST_CASE("total reward gates on format") {
    // malformed output, QA task -> 0
    auto r = rewards::total_reward("no tags", rewards::QaTask{"B"});
    CHECK(r.format == 0);
    CHECK(*r.accuracy == 0);
    CHECK(r.total == 0.0);

    // perfect QA -> 2
    r = rewards::total_reward("<think>because</think><answer>B</answer>", rewards::QaTask{"B"});
    CHECK(r.total == 2.0);

    // caption task: format + structured
    meta::MusicMetadata m;
    m.genre = "Americana";
    m.key = "G minor";
    r = rewards::total_reward("<think>t</think><answer>an americana waltz</answer>",
                              rewards::CaptionTask{m});
    CHECK(r.format == 1);
    CHECK(*r.structured == doctest::Approx(0.5));
    CHECK(r.total == doctest::Approx(1.5));
}
