#include "cadenza/synth.hpp"

#include "cadenza/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cadenza::synth {

using audio::AudioClip;

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

AudioClip click_track(double bpm, double duration_sec, int sample_rate, int accent_period,
                      double accent_db, std::uint64_t seed) {
    AudioClip clip;
    clip.sample_rate = sample_rate;
    clip.samples = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(duration_sec * sample_rate));

    Rng rng(seed);
    const double period = 60.0 / bpm * sample_rate;
    const auto click_len = static_cast<Eigen::Index>(0.01 * sample_rate);
    const double accent_gain = std::pow(10.0, accent_db / 20.0);

    // one shared burst shape so accents are the only beat-to-beat variation
    Eigen::VectorXd burst(click_len);
    for (Eigen::Index i = 0; i < click_len; ++i) {
        const double decay = std::exp(-8.0 * static_cast<double>(i) / click_len);
        burst[i] = decay * (2.0 * rng.uniform01() - 1.0);
    }

    int beat = 0;
    for (double pos = 0.0; pos < static_cast<double>(clip.samples.size()); pos += period, ++beat) {
        const auto start = static_cast<Eigen::Index>(pos);
        double gain = 0.4;
        if (accent_period > 0 && beat % accent_period == 0) gain *= accent_gain;
        for (Eigen::Index i = 0; i < click_len && start + i < clip.samples.size(); ++i)
            clip.samples[start + i] += gain * burst[i];
    }
    clip.samples = clip.samples.cwiseMax(-1.0).cwiseMin(1.0);
    return clip;
}

AudioClip sine(double freq_hz, double duration_sec, int sample_rate, double amplitude) {
    AudioClip clip;
    clip.sample_rate = sample_rate;
    const auto n = static_cast<Eigen::Index>(duration_sec * sample_rate);
    clip.samples.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
        clip.samples[i] = amplitude * std::sin(kTwoPi * freq_hz * i / sample_rate);
    return clip;
}

AudioClip silence(double duration_sec, int sample_rate) {
    AudioClip clip;
    clip.sample_rate = sample_rate;
    clip.samples = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(duration_sec * sample_rate));
    return clip;
}

AudioClip white_noise(double duration_sec, int sample_rate, double amplitude, std::uint64_t seed) {
    AudioClip clip;
    clip.sample_rate = sample_rate;
    const auto n = static_cast<Eigen::Index>(duration_sec * sample_rate);
    clip.samples.resize(n);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < n; ++i)
        clip.samples[i] = amplitude * (2.0 * rng.uniform01() - 1.0);
    return clip;
}

AudioClip mix(const std::vector<AudioClip>& clips) {
    AudioClip out;
    if (clips.empty()) return out;
    out.sample_rate = clips.front().sample_rate;
    Eigen::Index n = 0;
    for (const auto& c : clips) n = std::max(n, c.samples.size());
    out.samples = Eigen::VectorXd::Zero(n);
    for (const auto& c : clips) out.samples.head(c.samples.size()) += c.samples;
    const double peak = out.samples.cwiseAbs().maxCoeff();
    if (peak > 1.0) out.samples /= peak;
    return out;
}

AudioClip concat(const std::vector<AudioClip>& clips) {
    AudioClip out;
    if (clips.empty()) return out;
    out.sample_rate = clips.front().sample_rate;
    Eigen::Index n = 0;
    for (const auto& c : clips) n += c.samples.size();
    out.samples.resize(n);
    Eigen::Index pos = 0;
    for (const auto& c : clips) {
        out.samples.segment(pos, c.samples.size()) = c.samples;
        pos += c.samples.size();
    }
    return out;
}

double pitch_class_freq(int pc, int octave) {
    const int midi = 12 * (octave + 1) + pc;
    return 440.0 * std::pow(2.0, (midi - 69) / 12.0);
}

AudioClip scale(int tonic_pc, audio::KeyMode mode, double duration_sec, int sample_rate,
                int octave) {
    static constexpr int kMajorDegrees[] = {0, 2, 4, 5, 7, 9, 11};
    static constexpr int kMinorDegrees[] = {0, 2, 3, 5, 7, 8, 10};
    const int* degrees = mode == audio::KeyMode::major ? kMajorDegrees : kMinorDegrees;

    std::vector<AudioClip> notes;
    const double note_dur = duration_sec / 8.0;
    for (int i = 0; i < 7; ++i) {
        const int pc = (tonic_pc + degrees[i]) % 12;
        const int oct = octave + (tonic_pc + degrees[i]) / 12;
        notes.push_back(sine(pitch_class_freq(pc, oct), note_dur, sample_rate));
    }
    notes.push_back(sine(pitch_class_freq(tonic_pc, octave + 1), note_dur, sample_rate));
    return concat(notes);
}

AudioClip triad(int root_pc, bool major, double duration_sec, int sample_rate, int octave) {
    const int third = major ? 4 : 3;
    const auto note = [&](int offset) {
        const int pc = (root_pc + offset) % 12;
        const int oct = octave + (root_pc + offset) / 12;
        return sine(pitch_class_freq(pc, oct), duration_sec, sample_rate, 0.3);
    };
    return mix({note(0), note(third), note(7)});
}

std::vector<DemoItem> demo_corpus(std::uint64_t seed) {
    std::vector<DemoItem> items;

    const double tempos[] = {60.0, 90.0, 120.0, 150.0, 180.0};
    for (const double bpm : tempos) {
        DemoItem it;
        it.name = "click_" + std::to_string(static_cast<int>(bpm));
        it.clip = click_track(bpm, 12.0, 22050, 0, 6.0, seed);
        it.bpm = bpm;
        it.meter = "4/4";
        items.push_back(std::move(it));
    }

    {
        DemoItem it;
        it.name = "click_120_accent4";
        it.clip = click_track(120.0, 12.0, 22050, 4, 6.0, seed + 1);
        it.bpm = 120.0;
        it.meter = "4/4";
        items.push_back(std::move(it));
    }
    {
        DemoItem it;
        it.name = "click_120_accent3";
        it.clip = click_track(120.0, 12.0, 22050, 3, 6.0, seed + 2);
        it.bpm = 120.0;
        it.meter = "3/4";
        items.push_back(std::move(it));
    }

    for (int tonic = 0; tonic < 12; ++tonic) {
        for (const auto mode : {audio::KeyMode::major, audio::KeyMode::minor}) {
            DemoItem it;
            audio::KeyEstimate k;
            k.tonic = tonic;
            k.mode = mode;
            it.name = "scale_" + std::string(audio::pitch_class_name(tonic)) +
                      (mode == audio::KeyMode::major ? "_major" : "_minor");
            std::replace(it.name.begin(), it.name.end(), '#', 's');
            it.clip = scale(tonic, mode, 6.0, 22050);
            it.key = audio::key_label(k);
            items.push_back(std::move(it));
        }
    }

    {
        DemoItem it;
        it.name = "progression_C_Am_F_G";
        it.clip = concat({triad(0, true, 4.0, 22050), triad(9, false, 4.0, 22050),
                          triad(5, true, 4.0, 22050), triad(7, true, 4.0, 22050)});
        items.push_back(std::move(it));
    }

    return items;
}

} // namespace cadenza::synth
