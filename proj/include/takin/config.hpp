#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "takin/codec.hpp"
#include "takin/kvcache.hpp"
#include "takin/model.hpp"
#include "takin/protocol.hpp"
#include "takin/scheduler.hpp"

namespace takin {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One source of truth for the geometry-coupled knobs. Every field has a
// default; a JSON file overlays them; unknown keys are rejected by name.
struct Config {
    // model
    int32_t d_model = 128;
    int32_t n_layers = 4;
    int32_t n_heads = 4;
    int32_t ffn_dim = 512;
    int32_t max_positions = 2048;
    int32_t condition_len = 8;
    int32_t cond_source_dim = 64;
    uint64_t seed = 0;
    bool quantized = false; // serve with int8 weight-only matmuls
    // vocab
    int32_t phoneme_count = 128;
    int32_t codec_count = 1024;
    // codec
    int32_t sample_rate = 24000;
    int32_t frame_len = 2048;
    float amplitude = 0.5f;
    // cache
    int32_t pages = 512;
    int32_t page_size = 16;
    // scheduler
    int32_t max_batch = 8;
    int32_t queue_capacity = 64;
    std::string preempt_policy = "youngest";
    // server
    uint16_t port = 7070;
    uint32_t max_frame = kDefaultMaxFramePayload;
    int32_t chunk_tokens = 8;

    ModelConfig model_config() const {
        ModelConfig mc;
        mc.d_model = d_model;
        mc.n_layers = n_layers;
        mc.n_heads = n_heads;
        mc.ffn_dim = ffn_dim;
        mc.max_positions = max_positions;
        mc.vocab = VocabLayout(phoneme_count, codec_count);
        mc.condition_len = condition_len;
        mc.cond_source_dim = cond_source_dim;
        mc.seed = seed;
        return mc;
    }

    CodecSpec codec_spec() const {
        CodecSpec cs;
        cs.sample_rate = sample_rate;
        cs.frame_len = frame_len;
        cs.amplitude = amplitude;
        cs.codec_count = codec_count;
        return cs;
    }

    PageConfig page_config() const {
        PageConfig pc;
        pc.page_size = page_size;
        pc.num_pages = pages;
        pc.kv_elems_per_token = model_config().kv_elems_per_token();
        return pc;
    }

    EngineConfig engine_config() const {
        EngineConfig ec;
        ec.max_batch = max_batch;
        ec.queue_capacity = queue_capacity;
        ec.preempt_policy = preempt_policy_from_name(preempt_policy);
        return ec;
    }

    void validate() const {
        try {
            model_config().validate();
            codec_spec().validate();
            page_config().validate();
            (void)engine_config();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (codec_count > frame_len / 2) {
            throw ConfigError("config: vocab.codec_count (" + std::to_string(codec_count) +
                              ") exceeds codec.frame_len/2 (" + std::to_string(frame_len / 2) + ")");
        }
        if (max_positions < condition_len + 4) {
            throw ConfigError("config: model.max_positions (" + std::to_string(max_positions) +
                              ") too small for model.condition_len (" + std::to_string(condition_len) +
                              ") plus a minimal sequence");
        }
        if (chunk_tokens < 1) throw ConfigError("config: server.chunk_tokens must be >= 1");
        if (max_frame < uint32_t(frame_len) * 2) {
            throw ConfigError("config: server.max_frame smaller than one PCM codec frame");
        }
    }

    nlohmann::json to_json() const {
        return nlohmann::json{
            {"model",
             {{"d_model", d_model},
              {"n_layers", n_layers},
              {"n_heads", n_heads},
              {"ffn_dim", ffn_dim},
              {"max_positions", max_positions},
              {"condition_len", condition_len},
              {"cond_source_dim", cond_source_dim},
              {"seed", seed},
              {"quantized", quantized}}},
            {"vocab", {{"phoneme_count", phoneme_count}, {"codec_count", codec_count}}},
            {"codec",
             {{"sample_rate", sample_rate}, {"frame_len", frame_len}, {"amplitude", amplitude}}},
            {"cache", {{"pages", pages}, {"page_size", page_size}}},
            {"scheduler",
             {{"max_batch", max_batch},
              {"queue_capacity", queue_capacity},
              {"preempt_policy", preempt_policy}}},
            {"server", {{"port", port}, {"max_frame", max_frame}, {"chunk_tokens", chunk_tokens}}}};
    }

    // FNV-1a over the canonical (sorted-key) serialization.
    uint64_t checksum() const {
        const std::string dump = to_json().dump();
        return fnv1a64(dump.data(), dump.size());
    }
};

namespace detail {

inline void require_known_keys(const nlohmann::json& obj, const std::string& section,
                               const std::set<std::string>& known) {
    for (const auto& [key, _] : obj.items()) {
        if (!known.count(key)) {
            throw ConfigError("config: unknown key '" + section + "." + key + "'");
        }
    }
}

template <typename T>
void load_field(const nlohmann::json& obj, const std::string& section, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: bad value type for '" + section + "." + key + "'");
    }
}

} // namespace detail

inline Config config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    detail::require_known_keys(j, "", {"model", "vocab", "codec", "cache", "scheduler", "server"});
    Config c;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::require_known_keys(m, "model",
                                   {"d_model", "n_layers", "n_heads", "ffn_dim", "max_positions",
                                    "condition_len", "cond_source_dim", "seed", "quantized"});
        detail::load_field(m, "model", "d_model", c.d_model);
        detail::load_field(m, "model", "n_layers", c.n_layers);
        detail::load_field(m, "model", "n_heads", c.n_heads);
        detail::load_field(m, "model", "ffn_dim", c.ffn_dim);
        detail::load_field(m, "model", "max_positions", c.max_positions);
        detail::load_field(m, "model", "condition_len", c.condition_len);
        detail::load_field(m, "model", "cond_source_dim", c.cond_source_dim);
        detail::load_field(m, "model", "seed", c.seed);
        detail::load_field(m, "model", "quantized", c.quantized);
    }
    if (j.contains("vocab")) {
        const auto& v = j.at("vocab");
        detail::require_known_keys(v, "vocab", {"phoneme_count", "codec_count"});
        detail::load_field(v, "vocab", "phoneme_count", c.phoneme_count);
        detail::load_field(v, "vocab", "codec_count", c.codec_count);
    }
    if (j.contains("codec")) {
        const auto& cd = j.at("codec");
        detail::require_known_keys(cd, "codec", {"sample_rate", "frame_len", "amplitude"});
        detail::load_field(cd, "codec", "sample_rate", c.sample_rate);
        detail::load_field(cd, "codec", "frame_len", c.frame_len);
        detail::load_field(cd, "codec", "amplitude", c.amplitude);
    }
    if (j.contains("cache")) {
        const auto& ca = j.at("cache");
        detail::require_known_keys(ca, "cache", {"pages", "page_size"});
        detail::load_field(ca, "cache", "pages", c.pages);
        detail::load_field(ca, "cache", "page_size", c.page_size);
    }
    if (j.contains("scheduler")) {
        const auto& s = j.at("scheduler");
        detail::require_known_keys(s, "scheduler", {"max_batch", "queue_capacity", "preempt_policy"});
        detail::load_field(s, "scheduler", "max_batch", c.max_batch);
        detail::load_field(s, "scheduler", "queue_capacity", c.queue_capacity);
        detail::load_field(s, "scheduler", "preempt_policy", c.preempt_policy);
    }
    if (j.contains("server")) {
        const auto& sv = j.at("server");
        detail::require_known_keys(sv, "server", {"port", "max_frame", "chunk_tokens"});
        detail::load_field(sv, "server", "port", c.port);
        detail::load_field(sv, "server", "max_frame", c.max_frame);
        detail::load_field(sv, "server", "chunk_tokens", c.chunk_tokens);
    }
    c.validate();
    return c;
}

inline Config load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: JSON parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

} // namespace takin
