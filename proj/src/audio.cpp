#include "cadenza/audio.hpp"

#include "cadenza/errors.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

namespace cadenza::audio {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint32_t read_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void write_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void write_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

Eigen::VectorXd hann_window(int n) {
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i)
        w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / (n - 1)));
    return w;
}

/// Hann STFT magnitudes, one column per frame, no padding (frame t covers
/// samples [t*hop, t*hop + window)).
Eigen::MatrixXd stft_magnitudes(const AudioClip& clip, const StftParams& p) {
    const Eigen::Index n = clip.samples.size();
    if (n < p.window) return Eigen::MatrixXd(p.window / 2 + 1, 0);

    const Eigen::Index n_frames = (n - p.window) / p.hop + 1;
    const int n_bins = p.window / 2 + 1;
    const Eigen::VectorXd window = hann_window(p.window);

    Eigen::MatrixXd mags(n_bins, n_frames);
    Eigen::FFT<double> fft;
    std::vector<double> frame(static_cast<std::size_t>(p.window));
    std::vector<std::complex<double>> spectrum;
    for (Eigen::Index t = 0; t < n_frames; ++t) {
        for (int i = 0; i < p.window; ++i)
            frame[static_cast<std::size_t>(i)] = clip.samples[t * p.hop + i] * window[i];
        fft.fwd(spectrum, frame);
        for (int k = 0; k < n_bins; ++k) mags(k, t) = std::abs(spectrum[static_cast<std::size_t>(k)]);
    }
    return mags;
}

// Krumhansl-Kessler probe-tone profiles (major / minor, tonic first).
constexpr std::array<double, 12> kKkMajor = {6.35, 2.23, 3.48, 2.33, 4.38, 4.09,
                                             2.52, 5.19, 2.39, 3.66, 2.29, 2.88};
constexpr std::array<double, 12> kKkMinor = {6.33, 2.68, 3.52, 5.38, 2.60, 3.53,
                                             2.54, 4.75, 3.98, 2.69, 3.34, 3.17};

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const double mx = x.mean();
    const double my = y.mean();
    const Eigen::VectorXd cx = x.array() - mx;
    const Eigen::VectorXd cy = y.array() - my;
    const double denom = std::sqrt(cx.squaredNorm() * cy.squaredNorm());
    if (denom <= 0.0) return 0.0;
    return cx.dot(cy) / denom;
}

const std::array<const char*, 12> kPitchNames = {"C",  "C#", "D",  "D#", "E",  "F",
                                                 "F#", "G",  "G#", "A",  "A#", "B"};

} // namespace

StftParams stft_params_for_rate(int sample_rate) {
    StftParams p;
    const double scale = static_cast<double>(sample_rate) / 44100.0;
    p.window = std::max(64, static_cast<int>(std::lround(2048.0 * scale)));
    p.hop = std::max(16, static_cast<int>(std::lround(512.0 * scale)));
    return p;
}

AudioClip decode_wav(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw DecodeError("not a RIFF/WAVE container");

    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t sample_rate = 0;
    std::uint16_t bits = 0;
    bool have_fmt = false;
    const std::uint8_t* data = nullptr;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const std::uint32_t chunk_len = read_u32(bytes.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + chunk_len > bytes.size())
            throw DecodeError("chunk extends past end of file");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (chunk_len < 16) throw DecodeError("fmt chunk too short");
            format = read_u16(bytes.data() + body);
            channels = read_u16(bytes.data() + body + 2);
            sample_rate = read_u32(bytes.data() + body + 4);
            bits = read_u16(bytes.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = bytes.data() + body;
            data_len = chunk_len;
        }
        pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }

    if (!have_fmt || data == nullptr) throw DecodeError("missing fmt or data chunk");
    if (channels < 1 || channels > 2)
        throw UnsupportedFormat("only mono/stereo supported, got " + std::to_string(channels));
    if (sample_rate < 8000 || sample_rate > 192000)
        throw UnsupportedFormat("sample rate out of range: " + std::to_string(sample_rate));

    const bool pcm16 = format == 1 && bits == 16;
    const bool f32 = format == 3 && bits == 32;
    if (!pcm16 && !f32)
        throw UnsupportedFormat("only PCM16 and float32 supported");

    const std::size_t bytes_per_sample = pcm16 ? 2 : 4;
    const std::size_t frame_bytes = bytes_per_sample * channels;
    const std::size_t n_frames = data_len / frame_bytes;
    if (n_frames == 0) throw DecodeError("empty data chunk");

    AudioClip clip;
    clip.sample_rate = static_cast<int>(sample_rate);
    clip.samples.resize(static_cast<Eigen::Index>(n_frames));
    for (std::size_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t ch = 0; ch < channels; ++ch) {
            const std::uint8_t* s = data + i * frame_bytes + ch * bytes_per_sample;
            if (pcm16) {
                std::int16_t v;
                std::memcpy(&v, s, 2);
                acc += static_cast<double>(v) / 32768.0;
            } else {
                float v;
                std::memcpy(&v, s, 4);
                acc += static_cast<double>(v);
            }
        }
        double sample = acc / channels;
        if (!std::isfinite(sample)) sample = 0.0;
        clip.samples[static_cast<Eigen::Index>(i)] = std::clamp(sample, -1.0, 1.0);
    }
    return clip;
}

AudioClip load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_wav(bytes);
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
    const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
    std::vector<std::uint8_t> out;
    out.reserve(44 + 2 * n);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    write_u32(out, 36 + 2 * n);
    out.insert(out.end(), {'W', 'A', 'V', 'E'});
    out.insert(out.end(), {'f', 'm', 't', ' '});
    write_u32(out, 16);
    write_u16(out, 1);  // PCM
    write_u16(out, 1);  // mono
    write_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
    write_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
    write_u16(out, 2);
    write_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    write_u32(out, 2 * n);
    for (Eigen::Index i = 0; i < clip.samples.size(); ++i) {
        const double v = std::clamp(clip.samples[i], -1.0, 1.0);
        const auto q = static_cast<std::int16_t>(std::lround(v * 32767.0));
        write_u16(out, static_cast<std::uint16_t>(q));
    }
    return out;
}

void save_wav(const AudioClip& clip, const std::string& path) {
    const auto bytes = encode_wav(clip);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

std::vector<AudioClip> segment(const AudioClip& clip, double window_sec, double hop_sec) {
    if (window_sec <= 0.0) throw InvalidArgument("window_sec must be positive");
    if (hop_sec <= 0.0 || hop_sec > window_sec)
        throw InvalidArgument("hop_sec must satisfy 0 < hop <= window");

    const auto window = static_cast<Eigen::Index>(std::llround(window_sec * clip.sample_rate));
    const auto hop = static_cast<Eigen::Index>(std::llround(hop_sec * clip.sample_rate));
    const Eigen::Index n = clip.samples.size();

    std::vector<AudioClip> out;
    for (Eigen::Index start = 0; start < n; start += hop) {
        const Eigen::Index len = std::min(window, n - start);
        if (len < window) {
            // tail: kept only when strictly longer than half the window
            if (2 * len <= window) break;
        }
        AudioClip seg;
        seg.sample_rate = clip.sample_rate;
        seg.start_sec = clip.start_sec + static_cast<double>(start) / clip.sample_rate;
        seg.samples = clip.samples.segment(start, len);
        out.push_back(std::move(seg));
        if (start + len >= n) break;
    }
    return out;
}

OnsetEnvelope onset_envelope(const AudioClip& clip) {
    if (clip.duration_sec() < 1.0)
        throw InsufficientAudio("onset envelope needs at least 1 s of audio");

    const StftParams p = stft_params_for_rate(clip.sample_rate);
    const Eigen::MatrixXd mags = stft_magnitudes(clip, p);
    const Eigen::MatrixXd logmag = (1.0 + mags.array()).log();

    OnsetEnvelope env;
    env.frame_rate = static_cast<double>(clip.sample_rate) / p.hop;
    env.frame_offset_sec = clip.start_sec + 0.5 * p.window / clip.sample_rate;
    env.values = Eigen::VectorXd::Zero(logmag.cols());
    for (Eigen::Index t = 1; t < logmag.cols(); ++t)
        env.values[t] = (logmag.col(t) - logmag.col(t - 1)).cwiseMax(0.0).sum();
    return env;
}

TempoEstimate estimate_tempo(const OnsetEnvelope& env) {
    const Eigen::Index n = env.values.size();
    if (env.frame_rate <= 0.0 || static_cast<double>(n) / env.frame_rate < 4.0)
        throw InsufficientAudio("tempo estimation needs at least 4 s of envelope");

    const Eigen::VectorXd centered = env.values.array() - env.values.mean();
    if (centered.cwiseAbs().maxCoeff() < 1e-12)
        throw NoPeriodicity("flat onset envelope");

    const auto lag_lo = static_cast<Eigen::Index>(std::ceil(60.0 * env.frame_rate / 240.0));
    const auto lag_hi =
        std::min<Eigen::Index>(n - 2, static_cast<Eigen::Index>(std::floor(60.0 * env.frame_rate / 40.0)));
    if (lag_hi <= lag_lo) throw InsufficientAudio("envelope too short for the 40-240 BPM band");

    // biased mean-centered autocorrelation (/N): equal-height period multiples
    // resolve toward the shortest lag, the beat rather than the bar
    const Eigen::Index acf_hi = std::min<Eigen::Index>(3 * lag_hi + 2, n - 1);
    Eigen::VectorXd acf = Eigen::VectorXd::Zero(acf_hi + 1);
    for (Eigen::Index lag = 1; lag <= acf_hi; ++lag) {
        const Eigen::Index m = n - lag;
        acf[lag] = centered.head(m).dot(centered.tail(m)) / static_cast<double>(n);
    }

    Eigen::Index best = lag_lo;
    for (Eigen::Index lag = lag_lo; lag <= lag_hi; ++lag)
        if (acf[lag] > acf[best]) best = lag;
    if (acf[best] <= 1e-12) throw NoPeriodicity("no autocorrelation peak above noise floor");

    const auto bpm_of = [&](double lag) { return 60.0 * env.frame_rate / lag; };
    const auto local_peak = [&](Eigen::Index around) {
        Eigen::Index best_local = std::clamp<Eigen::Index>(around, 1, acf_hi);
        for (Eigen::Index l = std::max<Eigen::Index>(1, around - 2);
             l <= std::min(acf_hi, around + 2); ++l)
            if (acf[l] > acf[best_local]) best_local = l;
        return best_local;
    };
    // interpolated peak height; a period that falls between two lags splits
    // its mass, so raw bin values under-read the true peak
    const auto vertex_height = [&](Eigen::Index l) {
        if (l <= 0 || l >= acf_hi) return acf[l];
        const double a = acf[l - 1], b = acf[l], c = acf[l + 1];
        const double denom = a - 2.0 * b + c;
        if (denom >= -1e-12) return b;
        return b - (a - c) * (a - c) / (8.0 * denom);
    };

    // beat-level resolution: when a 2x or 3x faster multiple peaks within 10%
    // of the argmax, the argmax is a bar-level alias of it. Vertex heights,
    // because a period falling between lags splits its raw mass.
    for (int pass = 0; pass < 2; ++pass) {
        Eigen::Index descended = best;
        for (const Eigen::Index div : {2, 3}) {
            const Eigen::Index cand = local_peak(best / div);
            if (cand < lag_lo || cand > lag_hi || cand >= best) continue;
            if (vertex_height(cand) >= 0.9 * vertex_height(best)) {
                descended = cand;
                break;
            }
        }
        if (descended == best) break;
        best = descended;
    }

    // sub-lag refinement before the band decision: an integer lag can sit on
    // the wrong side of the band edge
    const auto refine = [&](Eigen::Index l) {
        double r = static_cast<double>(l);
        if (l > 1 && l < acf_hi) {
            const double a = acf[l - 1], b = acf[l], c = acf[l + 1];
            const double denom = a - 2.0 * b + c;
            if (std::abs(denom) > 1e-12) {
                const double shift = 0.5 * (a - c) / denom;
                if (std::abs(shift) <= 1.0) r += shift;
            }
        }
        return r;
    };
    double refined = refine(best);

    // octave disambiguation toward the 70-160 BPM band. A faster candidate
    // qualifies within 10% of the peak; a slower one must dominate by 10%,
    // because any clean periodic train scores its own double-lag alias at
    // parity and folding it in would halve every out-of-band tempo.
    const double peak_bpm = bpm_of(refined);
    if (peak_bpm < 70.0 || peak_bpm > 160.0) {
        const std::array<Eigen::Index, 4> family = {best / 2, best * 2, best / 3, best * 3};
        Eigen::Index chosen = -1;
        for (const Eigen::Index approx : family) {
            const Eigen::Index cand = local_peak(approx);
            if (cand < lag_lo || cand > lag_hi || cand == best) continue;
            const double cand_bpm = bpm_of(refine(cand));
            if (cand_bpm < 70.0 || cand_bpm > 160.0) continue;
            const double margin = cand < best ? 0.9 : 1.1;
            if (vertex_height(cand) < margin * vertex_height(best)) continue;
            if (chosen < 0 || acf[cand] > acf[chosen]) chosen = cand;
        }
        if (chosen >= 0) {
            best = chosen;
            refined = refine(best);
        }
    }

    TempoEstimate est;
    est.bpm = std::clamp(bpm_of(refined), 40.0, 240.0);

    // peak contrast as confidence
    double band_mean = 0.0;
    for (Eigen::Index lag = lag_lo; lag <= lag_hi; ++lag) band_mean += std::max(acf[lag], 0.0);
    band_mean /= static_cast<double>(lag_hi - lag_lo + 1);
    est.confidence = std::clamp(1.0 - band_mean / acf[best], 0.0, 1.0);

    // dynamic-programming beat tracking against the chosen period
    const double period = env.frame_rate * 60.0 / est.bpm;
    const double env_max = env.values.maxCoeff();
    const Eigen::VectorXd strength =
        env_max > 0.0 ? Eigen::VectorXd(env.values / env_max) : env.values;
    const double tightness = 10.0;

    Eigen::VectorXd score = strength;
    std::vector<Eigen::Index> backlink(static_cast<std::size_t>(n), -1);
    const auto win_lo = static_cast<Eigen::Index>(std::lround(period * 0.5));
    const auto win_hi = static_cast<Eigen::Index>(std::lround(period * 2.0));
    for (Eigen::Index t = 0; t < n; ++t) {
        double best_prev = -std::numeric_limits<double>::infinity();
        Eigen::Index best_idx = -1;
        for (Eigen::Index gap = win_lo; gap <= win_hi && gap <= t; ++gap) {
            const double log_ratio = std::log(static_cast<double>(gap) / period);
            const double v = score[t - gap] - tightness * log_ratio * log_ratio;
            if (v > best_prev) {
                best_prev = v;
                best_idx = t - gap;
            }
        }
        if (best_idx >= 0) {
            score[t] += best_prev;
            backlink[static_cast<std::size_t>(t)] = best_idx;
        }
    }

    Eigen::Index end = 0;
    score.maxCoeff(&end);
    std::vector<double> beats;
    for (Eigen::Index t = end; t >= 0; t = backlink[static_cast<std::size_t>(t)]) {
        beats.push_back(env.frame_time(t));
        if (backlink[static_cast<std::size_t>(t)] < 0) break;
    }
    std::reverse(beats.begin(), beats.end());
    est.beat_times = std::move(beats);
    return est;
}

Eigen::MatrixXd chroma_energies(const AudioClip& clip) {
    if (clip.duration_sec() < 0.5)
        throw InsufficientAudio("chromagram needs at least 0.5 s of audio");

    const StftParams p = stft_params_for_rate(clip.sample_rate);
    const Eigen::MatrixXd mags = stft_magnitudes(clip, p);

    // spectral peaks with parabolic frequency refinement; folding whole bins
    // would smear low-frequency leakage across neighboring pitch classes
    Eigen::MatrixXd chroma = Eigen::MatrixXd::Zero(12, mags.cols());
    const double bin_hz = static_cast<double>(clip.sample_rate) / p.window;
    for (Eigen::Index t = 0; t < mags.cols(); ++t) {
        const double frame_max = mags.col(t).maxCoeff();
        if (frame_max <= 1e-9) continue;
        for (Eigen::Index k = 1; k + 1 < mags.rows(); ++k) {
            const double m = mags(k, t);
            if (m <= mags(k - 1, t) || m < mags(k + 1, t)) continue;
            if (m < 1e-3 * frame_max) continue;
            const double a = mags(k - 1, t), c = mags(k + 1, t);
            const double denom = a - 2.0 * m + c;
            double delta = 0.0;
            if (std::abs(denom) > 1e-12) delta = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
            const double freq = (static_cast<double>(k) + delta) * bin_hz;
            if (freq < 55.0 || freq > 5000.0) continue;
            const double midi = 69.0 + 12.0 * std::log2(freq / 440.0);
            const int pc = ((static_cast<int>(std::lround(midi)) % 12) + 12) % 12;
            chroma(pc, t) += m;
        }
    }
    return chroma;
}

Chromagram chromagram(const AudioClip& clip) {
    Chromagram out;
    out.frames = chroma_energies(clip);
    const StftParams p = stft_params_for_rate(clip.sample_rate);
    out.frame_rate = static_cast<double>(clip.sample_rate) / p.hop;
    out.duration_sec = clip.duration_sec();
    for (Eigen::Index t = 0; t < out.frames.cols(); ++t) {
        const double peak = out.frames.col(t).maxCoeff();
        if (peak > 0.0) out.frames.col(t) /= peak;
    }
    return out;
}

KeyEstimate estimate_key(const Chromagram& chroma) {
    if (chroma.frames.cols() < 10)
        throw InsufficientAudio("key estimation needs at least 10 chroma frames");

    const Eigen::VectorXd mean_chroma = chroma.frames.rowwise().mean();
    if (mean_chroma.maxCoeff() <= 0.0) throw NoTonalContent("all-zero chromagram");
    if ((mean_chroma.array() - mean_chroma.mean()).abs().maxCoeff() < 1e-12)
        throw NoTonalContent("constant chroma has no tonal profile");

    KeyEstimate best;
    double best_r = -2.0;
    for (int tonic = 0; tonic < 12; ++tonic) {
        for (const KeyMode mode : {KeyMode::major, KeyMode::minor}) {
            const auto& profile = mode == KeyMode::major ? kKkMajor : kKkMinor;
            Eigen::VectorXd rotated(12);
            for (int pc = 0; pc < 12; ++pc) rotated[pc] = profile[static_cast<std::size_t>((pc - tonic + 12) % 12)];
            const double r = pearson(mean_chroma, rotated);
            if (r > best_r) {  // strict: ties keep lower tonic, major before minor
                best_r = r;
                best = {tonic, mode, r};
            }
        }
    }
    return best;
}

std::vector<ChordSegment> recognize_chords(const Chromagram& chroma, const ChordConfig& config) {
    const Eigen::Index n = chroma.frames.cols();
    if (n < 10) throw InsufficientAudio("chord recognition needs at least 10 chroma frames");

    const double duration = chroma.duration_sec > 0.0
                                ? chroma.duration_sec
                                : static_cast<double>(n) / chroma.frame_rate;

    if (chroma.frames.maxCoeff() <= 0.0)
        return {{"N", 0.0, duration}};

    // 24 binary triads + uniform no-chord, all unit-normalized
    constexpr int kNoChord = 24;
    Eigen::MatrixXd templates = Eigen::MatrixXd::Zero(12, 25);
    std::vector<std::string> labels(25);
    for (int root = 0; root < 12; ++root) {
        templates(root, root) = templates((root + 4) % 12, root) = templates((root + 7) % 12, root) = 1.0;
        templates(root, 12 + root) = templates((root + 3) % 12, 12 + root) =
            templates((root + 7) % 12, 12 + root) = 1.0;
        labels[static_cast<std::size_t>(root)] = std::string(kPitchNames[static_cast<std::size_t>(root)]) + ":maj";
        labels[static_cast<std::size_t>(12 + root)] = std::string(kPitchNames[static_cast<std::size_t>(root)]) + ":min";
    }
    templates.col(kNoChord).setOnes();
    labels[kNoChord] = "N";
    for (int c = 0; c < 25; ++c) templates.col(c).normalize();

    // emission scores: cosine similarity (silent frames emit only no-chord)
    Eigen::MatrixXd emit(25, n);
    for (Eigen::Index t = 0; t < n; ++t) {
        const double norm = chroma.frames.col(t).norm();
        if (norm <= 0.0) {
            emit.col(t).setZero();
            emit(kNoChord, t) = 1.0;
        } else {
            emit.col(t) = templates.transpose() * (chroma.frames.col(t) / norm);
        }
    }

    // Viterbi over additive scores with a self-transition bonus
    const double stay = config.self_transition_bonus;
    Eigen::MatrixXd score(25, n);
    Eigen::MatrixXi from(25, n);
    score.col(0) = emit.col(0);
    from.col(0).setConstant(-1);
    for (Eigen::Index t = 1; t < n; ++t) {
        Eigen::Index best_prev = 0;
        score.col(t - 1).maxCoeff(&best_prev);
        for (int c = 0; c < 25; ++c) {
            const double switch_score = score(best_prev, t - 1);
            const double stay_score = score(c, t - 1) + stay;
            if (stay_score >= switch_score) {
                score(c, t) = stay_score + emit(c, t);
                from(c, t) = c;
            } else {
                score(c, t) = switch_score + emit(c, t);
                from(c, t) = static_cast<int>(best_prev);
            }
        }
    }

    std::vector<int> path(static_cast<std::size_t>(n));
    Eigen::Index last = 0;
    score.col(n - 1).maxCoeff(&last);
    path[static_cast<std::size_t>(n - 1)] = static_cast<int>(last);
    for (Eigen::Index t = n - 1; t > 0; --t)
        path[static_cast<std::size_t>(t - 1)] = from(path[static_cast<std::size_t>(t)], t);

    // merge identical neighbors; boundaries at frame starts, ends clamp to duration
    std::vector<ChordSegment> segments;
    Eigen::Index seg_start = 0;
    for (Eigen::Index t = 1; t <= n; ++t) {
        if (t == n || path[static_cast<std::size_t>(t)] != path[static_cast<std::size_t>(seg_start)]) {
            ChordSegment seg;
            seg.label = labels[static_cast<std::size_t>(path[static_cast<std::size_t>(seg_start)])];
            seg.start_sec = seg_start == 0 ? 0.0 : static_cast<double>(seg_start) / chroma.frame_rate;
            seg.end_sec = t == n ? duration : static_cast<double>(t) / chroma.frame_rate;
            segments.push_back(std::move(seg));
            seg_start = t;
        }
    }
    return segments;
}

MeterEstimate estimate_meter(const OnsetEnvelope& env, const TempoEstimate& tempo) {
    MeterEstimate out;
    if (tempo.beat_times.size() < 8) {
        out.low_confidence = true;
        return out;
    }

    // envelope strength sampled at each beat
    Eigen::VectorXd accents(static_cast<Eigen::Index>(tempo.beat_times.size()));
    for (std::size_t i = 0; i < tempo.beat_times.size(); ++i) {
        auto frame = static_cast<Eigen::Index>(
            std::lround((tempo.beat_times[i] - env.frame_offset_sec) * env.frame_rate));
        frame = std::clamp<Eigen::Index>(frame, 0, env.values.size() - 1);
        accents[static_cast<Eigen::Index>(i)] = env.values[frame];
    }
    const double overall = accents.mean();

    const auto group_score = [&](int period) {
        double best_phase = -std::numeric_limits<double>::infinity();
        for (int phase = 0; phase < period; ++phase) {
            double sum = 0.0;
            int count = 0;
            for (Eigen::Index i = phase; i < accents.size(); i += period) {
                sum += accents[i];
                ++count;
            }
            if (count > 0) best_phase = std::max(best_phase, sum / count - overall);
        }
        return best_phase;
    };

    const double three = group_score(3);
    const double four = group_score(4);
    // no discernible accent contrast counts as a tie -> 4/4
    const double tie_floor = 0.05 * std::max(overall, 1e-12);
    if (std::max(three, four) < tie_floor || three <= four)
        out.meter = Meter::four_four;
    else
        out.meter = Meter::three_four;
    return out;
}

const char* meter_label(Meter m) { return m == Meter::three_four ? "3/4" : "4/4"; }

std::string key_label(const KeyEstimate& k) {
    return std::string(kPitchNames[static_cast<std::size_t>(k.tonic % 12)]) +
           (k.mode == KeyMode::major ? " major" : " minor");
}

const char* pitch_class_name(int pc) { return kPitchNames[static_cast<std::size_t>(((pc % 12) + 12) % 12)]; }

} // namespace cadenza::audio
