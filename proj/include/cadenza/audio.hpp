#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace cadenza::audio {

/// Decoded mono audio. Samples are amplitudes in [-1,1]; `start_sec` is the
/// offset of this clip inside its source recording (0 for whole files).
struct AudioClip {
    Eigen::VectorXd samples;
    int sample_rate = 44100;
    double start_sec = 0.0;

    double duration_sec() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

struct OnsetEnvelope {
    Eigen::VectorXd values;   // non-negative per-frame novelty
    double frame_rate = 0.0;  // frames / sec
    double frame_offset_sec = 0.0;  // time of frame 0 (window center)

    double frame_time(Eigen::Index frame) const {
        return frame_offset_sec + static_cast<double>(frame) / frame_rate;
    }
};

/// Per-frame pitch-class energies, columns C..B (C = 0). Each column of
/// `frames` is one frame, max-normalized unless silent.
struct Chromagram {
    Eigen::MatrixXd frames;   // 12 x n_frames
    double frame_rate = 0.0;
    double duration_sec = 0.0;  // span of the source clip covered by the frames
};

struct TempoEstimate {
    double bpm = 0.0;
    double confidence = 0.0;             // [0,1] autocorrelation peak contrast
    std::vector<double> beat_times;      // seconds, strictly increasing
};

enum class KeyMode { major, minor };

struct KeyEstimate {
    int tonic = 0;  // pitch class 0..11, C = 0
    KeyMode mode = KeyMode::major;
    double correlation = 0.0;
};

/// Chord label over [start_sec, end_sec). `label` is one of the 24 maj/min
/// triads ("C:maj", "A:min", ...) or "N" for no-chord.
struct ChordSegment {
    std::string label;
    double start_sec = 0.0;
    double end_sec = 0.0;
};

enum class Meter { three_four, four_four };

struct MeterEstimate {
    Meter meter = Meter::four_four;
    bool low_confidence = false;
};

struct StftParams {
    int window = 2048;  // at 44.1 kHz; scaled proportionally for other rates
    int hop = 512;
};

/// Window/hop for a given rate (2048/512 at 44.1 kHz, rate-proportional).
StftParams stft_params_for_rate(int sample_rate);

// ---- decode / encode ----------------------------------------------------

/// Parse a RIFF/WAVE container (PCM16 or float32, 1-2 channels) and downmix
/// to mono by channel averaging.
AudioClip decode_wav(const std::vector<std::uint8_t>& bytes);
AudioClip load_wav(const std::string& path);

/// Serialize a clip as mono PCM16 WAV (values clamped to [-1,1]).
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);
void save_wav(const AudioClip& clip, const std::string& path);

// ---- segmentation -------------------------------------------------------

/// Tile the clip into hop-spaced windows. A final partial window is kept only
/// when it is strictly longer than half the window length. Each segment
/// carries its start offset in `start_sec`.
std::vector<AudioClip> segment(const AudioClip& clip, double window_sec, double hop_sec);

// ---- extractors ---------------------------------------------------------

/// Half-wave-rectified spectral flux over a Hann STFT with log-magnitude
/// compression log(1+|X|). Frame t is timestamped at its window center.
OnsetEnvelope onset_envelope(const AudioClip& clip);

/// Autocorrelation tempo in 40-240 BPM with octave disambiguation preferring
/// 70-160 BPM when a half/double candidate scores within 10% of the peak,
/// then dynamic-programming beat tracking against the chosen period.
TempoEstimate estimate_tempo(const OnsetEnvelope& env);

/// STFT magnitudes folded onto 12 equal-tempered pitch classes (A4 = 440 Hz),
/// per-frame max-normalized.
Chromagram chromagram(const AudioClip& clip);

/// Per-frame pitch-class energies before max-normalization (the accumulation
/// chromagram() normalizes). Exposed for energy-conservation checks.
Eigen::MatrixXd chroma_energies(const AudioClip& clip);

/// Krumhansl-Kessler profile correlation over the time-averaged chroma.
/// Ties break toward the lower tonic index, major before minor.
KeyEstimate estimate_key(const Chromagram& chroma);

struct ChordConfig {
    double self_transition_bonus = 2.0;  // Viterbi log-domain stay bonus
};

/// Cosine-similarity triad templates + uniform no-chord state, smoothed by
/// Viterbi decoding; adjacent identical labels merged. Segments tile
/// [0, chroma.duration_sec].
std::vector<ChordSegment> recognize_chords(const Chromagram& chroma,
                                           const ChordConfig& config = {});

/// Beat-aligned accent comparison under period-3 vs period-4 grouping.
/// Fewer than 8 beats falls back to 4/4 with `low_confidence` set.
MeterEstimate estimate_meter(const OnsetEnvelope& env, const TempoEstimate& tempo);

// ---- small shared helpers -----------------------------------------------

const char* meter_label(Meter m);           // "3/4" / "4/4"
std::string key_label(const KeyEstimate& k);  // e.g. "C major"
const char* pitch_class_name(int pc);         // "C", "C#", ...

} // namespace cadenza::audio
