#pragma once

#include "cadenza/audio.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cadenza::synth {

/// Click track: short decaying noise bursts at the given tempo. Every
/// `accent_period`-th click (if > 0) is boosted by `accent_db`.
audio::AudioClip click_track(double bpm, double duration_sec, int sample_rate = 44100,
                             int accent_period = 0, double accent_db = 6.0,
                             std::uint64_t seed = 1);

audio::AudioClip sine(double freq_hz, double duration_sec, int sample_rate = 44100,
                      double amplitude = 0.5);

audio::AudioClip silence(double duration_sec, int sample_rate = 44100);

audio::AudioClip white_noise(double duration_sec, int sample_rate = 44100,
                             double amplitude = 0.1, std::uint64_t seed = 1);

/// Sum of clips (max length wins); result renormalized if it clips.
audio::AudioClip mix(const std::vector<audio::AudioClip>& clips);

audio::AudioClip concat(const std::vector<audio::AudioClip>& clips);

/// Ascending one-octave diatonic scale (natural minor for minor mode),
/// tonic sounded at both ends, equal note durations.
audio::AudioClip scale(int tonic_pc, audio::KeyMode mode, double duration_sec,
                       int sample_rate = 44100, int octave = 4);

/// Triad chord (maj/min) as three equal sines rooted at `root_pc` in `octave`.
audio::AudioClip triad(int root_pc, bool major, double duration_sec,
                       int sample_rate = 44100, int octave = 4);

double pitch_class_freq(int pc, int octave);  // equal temperament, A4 = 440

/// One entry of the bundled demo corpus.
struct DemoItem {
    std::string name;
    audio::AudioClip clip;
    // generator ground truth, where meaningful
    double bpm = 0.0;
    std::string key;
    std::string meter;
};

/// The toy audio set used by the acceptance suite: click tracks at several
/// tempos and accent patterns, all 24 diatonic scales, and triad progressions.
std::vector<DemoItem> demo_corpus(std::uint64_t seed = 7);

} // namespace cadenza::synth
