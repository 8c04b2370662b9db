#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "takin/rng.hpp"
#include "takin/tensor.hpp"

namespace takin {

// Invertible stand-in for the neural codec: codec token t maps to a pure
// sinusoid at DFT analysis bin t+1, so token recovery is an argmax over
// bin magnitudes and the whole audio channel is machine-checkable.
struct CodecSpec {
    int32_t sample_rate = 24000;
    int32_t frame_len = 2048;  // samples per codec frame
    float amplitude = 0.5f;
    int32_t codec_count = 1024;

    void validate() const {
        if (sample_rate < 1 || frame_len < 2) throw std::invalid_argument("codec: bad sample_rate/frame_len");
        if (codec_count < 1) throw std::invalid_argument("codec: codec_count must be >= 1");
        if (codec_count > frame_len / 2) {
            throw std::invalid_argument("codec: codec_count exceeds frame_len/2 distinct analysis bins");
        }
    }

    double bin_frequency_hz(int32_t token) const {
        return double(token + 1) * sample_rate / frame_len;
    }
};

using Pcm = std::vector<int16_t>; // mono, signed 16-bit

struct PromptAudio {
    Pcm samples;
    int32_t sample_rate = 24000;
};

// Zero-phase cosine so the top bin (Nyquist, when codec_count = frame_len/2)
// still carries energy.
inline Pcm token_to_frame(const CodecSpec& spec, int32_t token) {
    spec.validate();
    if (token < 0 || token >= spec.codec_count) {
        throw std::invalid_argument("codec: token index out of range");
    }
    Pcm frame(size_t(spec.frame_len));
    const double w = 2.0 * std::numbers::pi * double(token + 1) / double(spec.frame_len);
    for (int32_t n = 0; n < spec.frame_len; ++n) {
        const double v = double(spec.amplitude) * 32767.0 * std::cos(w * n);
        frame[size_t(n)] = int16_t(std::lround(v));
    }
    return frame;
}

namespace detail {

// Goertzel power |X(bin)|^2; one multiply-add chain per sample.
inline double goertzel_power(std::span<const int16_t> frame, int32_t bin, int32_t frame_len) {
    const double w = 2.0 * std::numbers::pi * double(bin) / double(frame_len);
    const double coeff = 2.0 * std::cos(w);
    double s1 = 0.0, s2 = 0.0;
    for (int16_t x : frame) {
        const double s0 = double(x) + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    return s1 * s1 + s2 * s2 - coeff * s1 * s2;
}

} // namespace detail

// Argmax of DFT magnitude over bins 1..codec_count, minus 1. An all-zero
// frame falls back to token 0 by convention.
inline int32_t frame_to_token(const CodecSpec& spec, std::span<const int16_t> frame) {
    spec.validate();
    if (int32_t(frame.size()) != spec.frame_len) {
        throw std::invalid_argument("codec: frame length mismatch");
    }
    int32_t best = 0;
    double best_mag = -1.0;
    for (int32_t bin = 1; bin <= spec.codec_count; ++bin) {
        const double mag = detail::goertzel_power(frame, bin, spec.frame_len);
        if (mag > best_mag) {
            best_mag = mag;
            best = bin - 1;
        }
    }
    if (best_mag <= 0.0) return 0;
    return best;
}

// Per-frame log-magnitude spectrum over bins 1..frame_len/2, mean-pooled
// across whole frames. Magnitudes are normalized by frame length and floored
// at 1 before the log, so silence stays finite and near-empty bins are not
// dominated by quantization residue.
inline std::vector<double> pooled_log_spectrum(const CodecSpec& spec, const PromptAudio& audio) {
    spec.validate();
    const int32_t nbins = spec.frame_len / 2;
    const int64_t frames = int64_t(audio.samples.size()) / spec.frame_len;
    if (frames < 1) throw std::invalid_argument("codec: prompt audio shorter than one frame");
    std::vector<double> pooled(size_t(nbins), 0.0);
    for (int64_t f = 0; f < frames; ++f) {
        std::span<const int16_t> s(audio.samples.data() + f * spec.frame_len, size_t(spec.frame_len));
        for (int32_t bin = 1; bin <= nbins; ++bin) {
            const double power = std::max(detail::goertzel_power(s, bin, spec.frame_len), 0.0);
            pooled[size_t(bin - 1)] += std::log(std::sqrt(power) / double(spec.frame_len) + 1.0);
        }
    }
    for (double& v : pooled) v /= double(frames);
    return pooled;
}

// Deterministic acoustic prompt encoder: pooled log spectrum projected by a
// seed-determined fixed matrix into condition_len rows of cond_dim floats.
// The model's own condition projection lifts these to d_model.
inline Matrix prompt_embed(const CodecSpec& spec, const PromptAudio& audio, int32_t condition_len,
                           int32_t cond_dim, uint64_t seed) {
    if (condition_len < 0 || cond_dim < 1) throw std::invalid_argument("codec: bad embedding shape");
    const std::vector<double> pooled = pooled_log_spectrum(spec, audio);
    Matrix out(condition_len, cond_dim);
    SplitMix64 rng(seed);
    const float norm = 1.0f / std::sqrt(float(pooled.size()));
    for (int32_t r = 0; r < condition_len; ++r) {
        for (int32_t c = 0; c < cond_dim; ++c) {
            double acc = 0.0;
            for (double v : pooled) acc += double(rng.uniform(-norm, norm)) * v;
            out.at(r, c) = float(acc);
        }
    }
    return out;
}

inline double sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("sim: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("sim: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double sim(std::span<const float> a, std::span<const float> b) {
    std::vector<double> da(a.begin(), a.end()), db(b.begin(), b.end());
    return sim(std::span<const double>(da), std::span<const double>(db));
}

// ---------------------------------------------------------------------------
// WAV (RIFF, PCM s16le mono) — the only on-disk audio format.
// ---------------------------------------------------------------------------

namespace detail {

inline void wav_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
inline void wav_u16(std::string& out, uint16_t v) {
    out.push_back(char(v & 0xFF));
    out.push_back(char((v >> 8) & 0xFF));
}

} // namespace detail

inline std::string wav_serialize(const Pcm& samples, int32_t sample_rate) {
    const uint32_t data_bytes = uint32_t(samples.size() * 2);
    std::string out;
    out.reserve(44 + data_bytes);
    out.append("RIFF", 4);
    detail::wav_u32(out, 36 + data_bytes);
    out.append("WAVE", 4);
    out.append("fmt ", 4);
    detail::wav_u32(out, 16);
    detail::wav_u16(out, 1); // PCM
    detail::wav_u16(out, 1); // mono
    detail::wav_u32(out, uint32_t(sample_rate));
    detail::wav_u32(out, uint32_t(sample_rate) * 2);
    detail::wav_u16(out, 2);  // block align
    detail::wav_u16(out, 16); // bits per sample
    out.append("data", 4);
    detail::wav_u32(out, data_bytes);
    out.append(reinterpret_cast<const char*>(samples.data()), data_bytes);
    return out;
}

inline PromptAudio wav_parse(std::span<const unsigned char> bytes) {
    auto u32 = [&](size_t off) {
        return uint32_t(bytes[off]) | (uint32_t(bytes[off + 1]) << 8) | (uint32_t(bytes[off + 2]) << 16) |
               (uint32_t(bytes[off + 3]) << 24);
    };
    auto u16 = [&](size_t off) { return uint16_t(bytes[off]) | (uint16_t(bytes[off + 1]) << 8); };
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw std::invalid_argument("wav: not a RIFF/WAVE file");
    }
    PromptAudio audio;
    size_t off = 12;
    bool have_fmt = false;
    while (off + 8 <= bytes.size()) {
        const uint32_t chunk_size = u32(off + 4);
        const bool is_fmt = std::memcmp(bytes.data() + off, "fmt ", 4) == 0;
        const bool is_data = std::memcmp(bytes.data() + off, "data", 4) == 0;
        if (off + 8 + chunk_size > bytes.size()) throw std::invalid_argument("wav: truncated chunk");
        if (is_fmt) {
            if (chunk_size < 16) throw std::invalid_argument("wav: short fmt chunk");
            if (u16(off + 8) != 1 || u16(off + 10) != 1 || u16(off + 22) != 16) {
                throw std::invalid_argument("wav: only PCM s16le mono is supported");
            }
            audio.sample_rate = int32_t(u32(off + 12));
            have_fmt = true;
        } else if (is_data) {
            if (!have_fmt) throw std::invalid_argument("wav: data chunk before fmt");
            audio.samples.resize(chunk_size / 2);
            std::memcpy(audio.samples.data(), bytes.data() + off + 8, audio.samples.size() * 2);
            return audio;
        }
        off += 8 + chunk_size + (chunk_size & 1);
    }
    throw std::invalid_argument("wav: missing data chunk");
}

inline void wav_write_file(const std::string& path, const Pcm& samples, int32_t sample_rate) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("wav: cannot open " + path + " for writing");
    const std::string blob = wav_serialize(samples, sample_rate);
    out.write(blob.data(), std::streamsize(blob.size()));
    if (!out) throw std::runtime_error("wav: write failed for " + path);
}

inline PromptAudio wav_read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("wav: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return wav_parse(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(blob.data()), blob.size()));
}

// Built-in prompt presets so clients can synthesize without shipping audio.
inline PromptAudio preset_prompt(const CodecSpec& spec, const std::string& name) {
    if (name == "default") {
        PromptAudio audio;
        audio.sample_rate = spec.sample_rate;
        for (int32_t t : {0, 3, 11}) {
            const int32_t tok = std::min(t, spec.codec_count - 1);
            const Pcm frame = token_to_frame(spec, tok);
            audio.samples.insert(audio.samples.end(), frame.begin(), frame.end());
        }
        return audio;
    }
    if (name == "silence") {
        return PromptAudio{Pcm(size_t(spec.frame_len), 0), spec.sample_rate};
    }
    throw std::invalid_argument("codec: unknown prompt preset '" + name + "'");
}

} // namespace takin
