#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "takin/rng.hpp"
#include "takin/tensor.hpp"

namespace takin {

enum class AdapterKind { Domain, Speaker };

inline const char* adapter_kind_name(AdapterKind k) {
    return k == AdapterKind::Domain ? "domain" : "speaker";
}

inline AdapterKind adapter_kind_from_name(const std::string& s) {
    if (s == "domain") return AdapterKind::Domain;
    if (s == "speaker") return AdapterKind::Speaker;
    throw std::invalid_argument("adapter: unknown kind '" + s + "'");
}

// Attention projections carrying a low-rank delta.
enum LoraTarget { LORA_Q = 0, LORA_K = 1, LORA_V = 2, LORA_O = 3, LORA_TARGET_COUNT = 4 };

inline const char* lora_target_name(int t) {
    static constexpr std::array<const char*, 4> names = {"q", "k", "v", "o"};
    return names[size_t(t)];
}

// One low-rank factor pair. Effective delta = (alpha/rank) * B * A,
// A: rank x d_in, B: d_out x rank. rank 0 is the identity adapter.
struct LoraFactors {
    Matrix a;
    Matrix b;
};

struct LoraAdapter {
    std::string name;
    AdapterKind kind = AdapterKind::Domain;
    int32_t rank = 8;
    float alpha = 16.0f;
    // [layer][target]
    std::vector<std::array<LoraFactors, LORA_TARGET_COUNT>> layers;

    float scaling() const { return rank > 0 ? alpha / float(rank) : 0.0f; }

    // y += (alpha/rank) * B (A x); scratch must hold `rank` floats
    void apply(int32_t layer, int target, std::span<const float> x, std::span<float> y,
               std::span<float> scratch) const {
        if (rank == 0) return;
        const LoraFactors& f = layers[size_t(layer)][size_t(target)];
        std::span<float> ax = scratch.subspan(0, size_t(rank));
        matvec(f.a, x, ax);
        const float s = scaling();
        for (float& v : ax) v *= s;
        matvec_add(f.b, ax, y);
    }
};

// Deterministic adapter with factors uniform in [-init_scale, init_scale].
inline LoraAdapter random_adapter(const std::string& name, AdapterKind kind, int32_t n_layers,
                                  int32_t d_model, int32_t rank, float alpha, uint64_t seed,
                                  float init_scale = 0.01f) {
    if (rank < 0) throw std::invalid_argument("adapter: negative rank");
    LoraAdapter ad;
    ad.name = name;
    ad.kind = kind;
    ad.rank = rank;
    ad.alpha = alpha;
    SplitMix64 rng(seed);
    if (rank == 0) return ad;
    ad.layers.resize(size_t(n_layers));
    for (auto& layer : ad.layers) {
        for (auto& f : layer) {
            f.a = Matrix(rank, d_model);
            f.b = Matrix(d_model, rank);
            for (float& v : f.a.data) v = rng.uniform(-init_scale, init_scale);
            for (float& v : f.b.data) v = rng.uniform(-init_scale, init_scale);
        }
    }
    return ad;
}

// ---------------------------------------------------------------------------
// TKLA container: magic "TKLA", version u32 LE, metadata-length u32 LE,
// UTF-8 JSON metadata, then raw f32 LE tensor data in manifest order.
// ---------------------------------------------------------------------------

constexpr uint32_t kTklaVersion = 1;

namespace detail {

inline void put_u32le(std::string& out, uint32_t v) {
    out.push_back(char(v & 0xFF));
    out.push_back(char((v >> 8) & 0xFF));
    out.push_back(char((v >> 16) & 0xFF));
    out.push_back(char((v >> 24) & 0xFF));
}

inline uint32_t get_u32le(const unsigned char* p) {
    return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

inline void put_f32le(std::string& out, std::span<const float> v) {
    static_assert(sizeof(float) == 4);
    // assumes little-endian host, which is all this project targets
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * 4);
}

} // namespace detail

inline std::string tkla_serialize(const LoraAdapter& ad) {
    nlohmann::json meta;
    meta["name"] = ad.name;
    meta["kind"] = adapter_kind_name(ad.kind);
    meta["rank"] = ad.rank;
    meta["alpha"] = ad.alpha;
    meta["n_layers"] = ad.layers.size();
    nlohmann::json manifest = nlohmann::json::array();
    std::vector<std::span<const float>> order;
    for (size_t l = 0; l < ad.layers.size(); ++l) {
        for (int t = 0; t < LORA_TARGET_COUNT; ++t) {
            const LoraFactors& f = ad.layers[l][size_t(t)];
            const std::string base = "layers." + std::to_string(l) + "." + lora_target_name(t);
            manifest.push_back({{"name", base + ".A"}, {"shape", {f.a.rows, f.a.cols}}});
            manifest.push_back({{"name", base + ".B"}, {"shape", {f.b.rows, f.b.cols}}});
            order.emplace_back(f.a.data);
            order.emplace_back(f.b.data);
        }
    }
    meta["tensors"] = std::move(manifest);
    const std::string meta_str = meta.dump();

    std::string out;
    out.append("TKLA", 4);
    detail::put_u32le(out, kTklaVersion);
    detail::put_u32le(out, uint32_t(meta_str.size()));
    out.append(meta_str);
    for (auto sp : order) detail::put_f32le(out, sp);
    return out;
}

inline LoraAdapter tkla_parse(std::span<const unsigned char> bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "TKLA", 4) != 0) {
        throw std::invalid_argument("tkla: bad magic");
    }
    const uint32_t version = detail::get_u32le(bytes.data() + 4);
    if (version != kTklaVersion) {
        throw std::invalid_argument("tkla: unsupported version " + std::to_string(version));
    }
    const uint32_t meta_len = detail::get_u32le(bytes.data() + 8);
    if (bytes.size() < 12u + meta_len) throw std::invalid_argument("tkla: truncated metadata");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + meta_len);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("tkla: metadata parse error: ") + e.what());
    }

    LoraAdapter ad;
    try {
        ad.name = meta.at("name").get<std::string>();
        ad.kind = adapter_kind_from_name(meta.at("kind").get<std::string>());
        ad.rank = meta.at("rank").get<int32_t>();
        ad.alpha = meta.at("alpha").get<float>();
        const size_t n_layers = meta.at("n_layers").get<size_t>();
        ad.layers.resize(n_layers);

        size_t off = 12 + meta_len;
        for (const auto& entry : meta.at("tensors")) {
            const std::string tname = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<int32_t>>();
            if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) {
                throw std::invalid_argument("tkla: bad tensor shape for " + tname);
            }
            const size_t count = size_t(shape[0]) * size_t(shape[1]);
            if (bytes.size() < off + count * 4) throw std::invalid_argument("tkla: truncated tensor data");

            // name format: layers.<l>.<target>.<A|B>
            size_t layer = 0;
            int target = -1;
            char ab = 0;
            {
                std::istringstream is(tname);
                std::string part;
                std::vector<std::string> parts;
                while (std::getline(is, part, '.')) parts.push_back(part);
                if (parts.size() != 4 || parts[0] != "layers") {
                    throw std::invalid_argument("tkla: unknown tensor " + tname);
                }
                layer = std::stoul(parts[1]);
                for (int t = 0; t < LORA_TARGET_COUNT; ++t) {
                    if (parts[2] == lora_target_name(t)) target = t;
                }
                if (target < 0 || (parts[3] != "A" && parts[3] != "B")) {
                    throw std::invalid_argument("tkla: unknown tensor " + tname);
                }
                ab = parts[3][0];
            }
            if (layer >= n_layers) throw std::invalid_argument("tkla: tensor layer out of range");

            Matrix m(shape[0], shape[1]);
            std::memcpy(m.data.data(), bytes.data() + off, count * 4);
            off += count * 4;
            LoraFactors& f = ad.layers[layer][size_t(target)];
            if (ab == 'A') f.a = std::move(m); else f.b = std::move(m);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("tkla: metadata field error: ") + e.what());
    }
    return ad;
}

inline void tkla_write_file(const LoraAdapter& ad, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("tkla: cannot open " + path + " for writing");
    const std::string blob = tkla_serialize(ad);
    out.write(blob.data(), std::streamsize(blob.size()));
    if (!out) throw std::runtime_error("tkla: write failed for " + path);
}

inline LoraAdapter tkla_read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("tkla: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return tkla_parse(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(blob.data()), blob.size()));
}

// Shape check against the model geometry; used at registry load time.
inline void tkla_validate_shapes(const LoraAdapter& ad, int32_t n_layers, int32_t d_model) {
    if (ad.rank < 0) throw std::invalid_argument("adapter: negative rank");
    if (ad.rank == 0) {
        if (!ad.layers.empty()) throw std::invalid_argument("adapter: rank-0 adapter carries tensors");
        return;
    }
    if (int32_t(ad.layers.size()) != n_layers) {
        throw std::invalid_argument("adapter: layer count mismatch vs model");
    }
    for (const auto& layer : ad.layers) {
        for (const auto& f : layer) {
            if (f.a.rows != ad.rank || f.a.cols != d_model || f.b.rows != d_model || f.b.cols != ad.rank) {
                throw std::invalid_argument("adapter: factor shape mismatch vs model");
            }
        }
    }
}

} // namespace takin
