#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "takin/kvcache.hpp"
#include "takin/lora.hpp"
#include "takin/quant.hpp"
#include "takin/rng.hpp"
#include "takin/tensor.hpp"
#include "takin/vocab.hpp"

namespace takin {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int32_t d_model = 128;
    int32_t n_layers = 4;
    int32_t n_heads = 4;
    int32_t ffn_dim = 512;
    int32_t max_positions = 2048;
    VocabLayout vocab{128, 1024};
    int32_t condition_len = 8;
    int32_t cond_source_dim = 64; // width of prompt-encoder output rows
    uint64_t seed = 0;

    int32_t head_dim() const { return d_model / n_heads; }
    int64_t kv_elems_per_token() const { return int64_t(n_layers) * 2 * d_model; }

    void validate() const {
        if (d_model < 1 || n_layers < 1 || n_heads < 1 || ffn_dim < 1) {
            throw std::invalid_argument("model: dimensions must be >= 1");
        }
        if (d_model % n_heads != 0) throw std::invalid_argument("model: d_model not divisible by n_heads");
        if (condition_len < 0) throw std::invalid_argument("model: negative condition_len");
        if (max_positions < condition_len + 4) {
            throw std::invalid_argument("model: max_positions too small for any composed sequence");
        }
    }
};

struct LayerParams {
    Matrix wq, wk, wv, wo;
    Matrix wffn1, wffn2;
    std::vector<float> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

// Fully determined by (ModelConfig, seed). Output projection is tied to
// token_embedding.
struct Parameters {
    Matrix token_embedding;    // vocab x d_model
    Matrix position_embedding; // max_positions x d_model
    std::vector<LayerParams> layers;
    Matrix cond_proj;          // d_model x cond_source_dim
};

// Fill order is fixed and load-bearing for reproducibility: token embedding,
// position embedding, then per layer {q, k, v, o, ffn1, ffn2, ln1 gain, ln1
// bias, ln2 gain, ln2 bias}, then the condition projection. Every scalar is
// uniform in [-0.02, 0.02] from a splitmix64 generator seeded with
// config.seed.
inline Parameters init_params(const ModelConfig& cfg) {
    cfg.validate();
    SplitMix64 rng(cfg.seed);
    auto fill = [&](Matrix& m, int32_t r, int32_t c) {
        m = Matrix(r, c);
        for (float& v : m.data) v = rng.uniform(-0.02f, 0.02f);
    };
    auto fill_vec = [&](std::vector<float>& v, int32_t n) {
        v.resize(size_t(n));
        for (float& x : v) x = rng.uniform(-0.02f, 0.02f);
    };
    Parameters p;
    fill(p.token_embedding, cfg.vocab.total_size(), cfg.d_model);
    fill(p.position_embedding, cfg.max_positions, cfg.d_model);
    p.layers.resize(size_t(cfg.n_layers));
    for (auto& l : p.layers) {
        fill(l.wq, cfg.d_model, cfg.d_model);
        fill(l.wk, cfg.d_model, cfg.d_model);
        fill(l.wv, cfg.d_model, cfg.d_model);
        fill(l.wo, cfg.d_model, cfg.d_model);
        fill(l.wffn1, cfg.ffn_dim, cfg.d_model);
        fill(l.wffn2, cfg.d_model, cfg.ffn_dim);
        fill_vec(l.ln1_gain, cfg.d_model);
        fill_vec(l.ln1_bias, cfg.d_model);
        fill_vec(l.ln2_gain, cfg.d_model);
        fill_vec(l.ln2_bias, cfg.d_model);
    }
    fill(p.cond_proj, cfg.d_model, cfg.cond_source_dim);
    return p;
}

// FNV-1a over all tensors in fill order.
inline uint64_t params_checksum(const Parameters& p) {
    uint64_t h = 0xCBF29CE484222325ULL;
    h = fnv1a64(std::span<const float>(p.token_embedding.data), h);
    h = fnv1a64(std::span<const float>(p.position_embedding.data), h);
    for (const auto& l : p.layers) {
        h = fnv1a64(std::span<const float>(l.wq.data), h);
        h = fnv1a64(std::span<const float>(l.wk.data), h);
        h = fnv1a64(std::span<const float>(l.wv.data), h);
        h = fnv1a64(std::span<const float>(l.wo.data), h);
        h = fnv1a64(std::span<const float>(l.wffn1.data), h);
        h = fnv1a64(std::span<const float>(l.wffn2.data), h);
        h = fnv1a64(std::span<const float>(l.ln1_gain), h);
        h = fnv1a64(std::span<const float>(l.ln1_bias), h);
        h = fnv1a64(std::span<const float>(l.ln2_gain), h);
        h = fnv1a64(std::span<const float>(l.ln2_bias), h);
    }
    h = fnv1a64(std::span<const float>(p.cond_proj.data), h);
    return h;
}

// Weight-only int8 of every matmul operand. Embedding and position lookups
// stay float; the tied output projection is quantized separately.
struct QuantLayer {
    QuantMatrix wq, wk, wv, wo, wffn1, wffn2;
};

struct QuantParams {
    std::vector<QuantLayer> layers;
    QuantMatrix out_proj;   // quantized token_embedding used as logits matmul
    QuantMatrix cond_proj;
};

inline QuantParams quantize_weights(const Parameters& p) {
    QuantParams q;
    q.layers.resize(p.layers.size());
    for (size_t l = 0; l < p.layers.size(); ++l) {
        q.layers[l].wq = quantize_matrix(p.layers[l].wq);
        q.layers[l].wk = quantize_matrix(p.layers[l].wk);
        q.layers[l].wv = quantize_matrix(p.layers[l].wv);
        q.layers[l].wo = quantize_matrix(p.layers[l].wo);
        q.layers[l].wffn1 = quantize_matrix(p.layers[l].wffn1);
        q.layers[l].wffn2 = quantize_matrix(p.layers[l].wffn2);
    }
    q.out_proj = quantize_matrix(p.token_embedding);
    q.cond_proj = quantize_matrix(p.cond_proj);
    return q;
}

struct DecodeParams {
    enum class Mode { Greedy, Sampled };
    Mode mode = Mode::Greedy;
    float temperature = 1.0f; // ignored in greedy mode
    int32_t top_k = 50;       // ignored in greedy mode
    uint64_t rng_seed = 0;    // ignored in greedy mode
    int32_t max_new_tokens = 64;
};

// Argmax over the vocabulary, ties broken by lowest id.
inline TokenId greedy_step(std::span<const float> logits) {
    if (logits.empty()) throw std::invalid_argument("greedy_step: empty logits");
    TokenId best = 0;
    float best_v = logits[0];
    for (size_t i = 0; i < logits.size(); ++i) {
        if (!std::isfinite(logits[i])) throw NumericError("greedy_step: non-finite logit");
        if (logits[i] > best_v) {
            best_v = logits[i];
            best = TokenId(i);
        }
    }
    return best;
}

// Softmax over temperature-scaled logits restricted to top_k (ranked by
// logit desc, id asc), one draw from the caller's generator.
inline TokenId sample_step(std::span<const float> logits, const DecodeParams& dp, SplitMix64& rng) {
    const int32_t n = int32_t(logits.size());
    if (dp.top_k < 1 || dp.top_k > n) throw std::invalid_argument("sample_step: top_k out of range");
    if (!(dp.temperature > 0.0f)) throw std::invalid_argument("sample_step: temperature must be > 0");
    for (float v : logits) {
        if (!std::isfinite(v)) throw NumericError("sample_step: non-finite logit");
    }
    std::vector<TokenId> ids(static_cast<size_t>(n));
    for (int32_t i = 0; i < n; ++i) ids[size_t(i)] = i;
    std::partial_sort(ids.begin(), ids.begin() + dp.top_k, ids.end(), [&](TokenId a, TokenId b) {
        if (logits[size_t(a)] != logits[size_t(b)]) return logits[size_t(a)] > logits[size_t(b)];
        return a < b;
    });
    std::vector<double> probs(static_cast<size_t>(dp.top_k));
    double mx = -HUGE_VAL;
    for (int32_t i = 0; i < dp.top_k; ++i) {
        probs[size_t(i)] = double(logits[size_t(ids[size_t(i)])]) / double(dp.temperature);
        mx = std::max(mx, probs[size_t(i)]);
    }
    double sum = 0.0;
    for (double& p : probs) {
        p = std::exp(p - mx);
        sum += p;
    }
    const double u = rng.next_double() * sum;
    double acc = 0.0;
    for (int32_t i = 0; i < dp.top_k; ++i) {
        acc += probs[size_t(i)];
        if (u < acc) return ids[size_t(i)];
    }
    return ids[size_t(dp.top_k) - 1];
}

using AdapterStack = std::vector<std::shared_ptr<const LoraAdapter>>;

enum class ForwardStatus { Ok, OutOfPages };

struct ForwardResult {
    ForwardStatus status = ForwardStatus::Ok;
    std::vector<float> logits; // last position, when requested and status == Ok
    int64_t positions_written = 0;
};

namespace detail {

struct FloatWeightView {
    const Parameters* p;
    const Matrix& attn(size_t l, int t) const {
        const LayerParams& lp = p->layers[l];
        switch (t) {
            case LORA_Q: return lp.wq;
            case LORA_K: return lp.wk;
            case LORA_V: return lp.wv;
            default: return lp.wo;
        }
    }
    const Matrix& ffn1(size_t l) const { return p->layers[l].wffn1; }
    const Matrix& ffn2(size_t l) const { return p->layers[l].wffn2; }
    const Matrix& out_proj() const { return p->token_embedding; }
    const Matrix& cond_proj() const { return p->cond_proj; }
};

struct QuantWeightView {
    const QuantParams* q;
    const QuantMatrix& attn(size_t l, int t) const {
        const QuantLayer& lp = q->layers[l];
        switch (t) {
            case LORA_Q: return lp.wq;
            case LORA_K: return lp.wk;
            case LORA_V: return lp.wv;
            default: return lp.wo;
        }
    }
    const QuantMatrix& ffn1(size_t l) const { return q->layers[l].wffn1; }
    const QuantMatrix& ffn2(size_t l) const { return q->layers[l].wffn2; }
    const QuantMatrix& out_proj() const { return q->out_proj; }
    const QuantMatrix& cond_proj() const { return q->cond_proj; }
};

} // namespace detail

// Deterministic decoder-only transformer over the unified vocabulary.
// Pre-norm residual blocks, GELU feed-forward, absolute position
// embeddings, tied output projection. All state lives in the caller's
// KvStream; the model itself is immutable and shareable.
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)), params_(init_params(cfg_)) {}
    Model(ModelConfig cfg, Parameters params) : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
    }

    const ModelConfig& config() const { return cfg_; }
    const Parameters& params() const { return params_; }
    Parameters& mutable_params() { quant_.reset(); return params_; }

    void enable_quantized() {
        if (!quant_) quant_ = quantize_weights(params_);
    }
    const QuantParams& quant_params() {
        enable_quantized();
        return *quant_;
    }

    // Processes every not-yet-cached position of the sequence
    // [cond slots, token_ids...] and returns logits for the final position.
    // stream.size() tells the pass where to resume, so the same call shape
    // serves prefill, single-token decode, and recompute after preemption.
    ForwardResult forward(const AdapterStack& adapters, const Matrix& cond,
                          std::span<const TokenId> token_ids, KvStream& stream,
                          bool want_logits = true, bool use_quant = false) const {
        if (use_quant) {
            if (!quant_) throw std::logic_error("model: quantized weights not prepared");
            return forward_impl(detail::QuantWeightView{&*quant_}, adapters, cond, token_ids, stream,
                                want_logits);
        }
        return forward_impl(detail::FloatWeightView{&params_}, adapters, cond, token_ids, stream,
                            want_logits);
    }

    // Mean log-probability over the masked (codec + E) positions of a full
    // training-layout sequence. Self-contained contiguous scratch; no cache
    // handle involved.
    double sequence_logprob(const ComposedSequence& seq, const Matrix& cond,
                            const AdapterStack& adapters = {}) const {
        const auto mask = prediction_mask(seq);
        size_t masked = 0;
        for (bool b : mask) masked += b ? 1 : 0;
        if (masked == 0) throw std::invalid_argument("sequence_logprob: no masked positions");
        if (seq.condition_len != cfg_.condition_len) {
            throw std::invalid_argument("sequence_logprob: condition_len mismatch");
        }

        ScratchKv scratch(cfg_.kv_elems_per_token());
        const auto view = detail::FloatWeightView{&params_};
        const auto& tokens = seq.token_ids;
        if (cfg_.condition_len > 0) {
            forward_impl(view, adapters, cond, std::span<const TokenId>(tokens.data(), 0), scratch,
                         /*want_logits=*/false);
        }
        double total = 0.0;
        // logits after consuming token j predict token j+1
        for (size_t j = 0; j + 1 < tokens.size(); ++j) {
            const bool want = mask[j + 1];
            auto res = forward_impl(view, adapters, cond,
                                    std::span<const TokenId>(tokens.data(), j + 1), scratch, want);
            if (want) total += log_softmax_at(res.logits, tokens[j + 1]);
        }
        return total / double(masked);
    }

private:
    struct ScratchKv final : KvStream {
        explicit ScratchKv(int64_t elems) : elems_(elems) {}
        bool try_append(std::span<const float> token_kv) override {
            buf_.insert(buf_.end(), token_kv.begin(), token_kv.end());
            return true;
        }
        std::span<const float> gather(int64_t upto) override {
            return {buf_.data(), size_t(upto) * size_t(elems_)};
        }
        int64_t size() const override { return int64_t(buf_.size()) / elems_; }
        int64_t elems_;
        std::vector<float> buf_;
    };

    template <class WeightView>
    ForwardResult forward_impl(const WeightView& w, const AdapterStack& adapters, const Matrix& cond,
                               std::span<const TokenId> token_ids, KvStream& stream,
                               bool want_logits) const {
        const int32_t d = cfg_.d_model;
        const int32_t hd = cfg_.head_dim();
        const int64_t total = int64_t(cfg_.condition_len) + int64_t(token_ids.size());
        const int64_t start = stream.size();
        if (start > total) throw std::invalid_argument("forward: cache ahead of sequence");
        if (total > cfg_.max_positions) throw std::invalid_argument("forward: position overflow");
        if (cfg_.condition_len > 0 && (cond.rows != cfg_.condition_len || cond.cols != cfg_.cond_source_dim)) {
            throw std::invalid_argument("forward: condition embedding shape mismatch");
        }
        int32_t max_rank = 0;
        for (const auto& ad : adapters) max_rank = std::max(max_rank, ad ? ad->rank : 0);

        ForwardResult result;
        std::vector<float> h(static_cast<size_t>(d)), normed(static_cast<size_t>(d));
        std::vector<float> q(static_cast<size_t>(d)), attn_out(static_cast<size_t>(d));
        std::vector<float> proj(static_cast<size_t>(d));
        std::vector<float> ffn_mid(static_cast<size_t>(cfg_.ffn_dim));
        std::vector<float> lora_scratch(static_cast<size_t>(std::max(max_rank, 1)));
        std::vector<float> token_kv(static_cast<size_t>(cfg_.kv_elems_per_token()));
        std::vector<float> scores;
        const size_t per_tok = size_t(cfg_.kv_elems_per_token());

        for (int64_t pos = start; pos < total; ++pos) {
            // input embedding
            if (pos < cfg_.condition_len) {
                matvec(w.cond_proj(), std::span<const float>(cond.row(int32_t(pos)), size_t(cond.cols)),
                       std::span<float>(h));
            } else {
                const TokenId id = token_ids[size_t(pos - cfg_.condition_len)];
                if (id < 0 || id >= cfg_.vocab.total_size()) {
                    throw std::invalid_argument("forward: token id out of vocabulary");
                }
                const float* emb = params_.token_embedding.row(id);
                std::copy(emb, emb + d, h.begin());
            }
            const float* pe = params_.position_embedding.row(int32_t(pos));
            for (int32_t i = 0; i < d; ++i) h[size_t(i)] += pe[size_t(i)];

            std::span<const float> past = stream.gather(pos);
            float* kv_out = token_kv.data();

            for (int32_t layer = 0; layer < cfg_.n_layers; ++layer) {
                const LayerParams& lp = params_.layers[size_t(layer)];
                layernorm(h, lp.ln1_gain, lp.ln1_bias, normed);

                float* k_cur = kv_out + size_t(layer) * 2 * d;
                float* v_cur = k_cur + d;
                project(w, adapters, layer, LORA_Q, normed, q, lora_scratch);
                project(w, adapters, layer, LORA_K, normed, {k_cur, size_t(d)}, lora_scratch);
                project(w, adapters, layer, LORA_V, normed, {v_cur, size_t(d)}, lora_scratch);

                // causal attention over [0, pos] with the current position's
                // k/v read locally (not yet in the stream)
                scores.resize(size_t(pos) + 1);
                const float inv_sqrt = 1.0f / std::sqrt(float(hd));
                for (int32_t head = 0; head < cfg_.n_heads; ++head) {
                    const int32_t hoff = head * hd;
                    for (int64_t t = 0; t < pos; ++t) {
                        const float* kt = past.data() + size_t(t) * per_tok + size_t(layer) * 2 * d + hoff;
                        float s = 0.0f;
                        for (int32_t i = 0; i < hd; ++i) s += q[size_t(hoff + i)] * kt[i];
                        scores[size_t(t)] = s * inv_sqrt;
                    }
                    {
                        float s = 0.0f;
                        for (int32_t i = 0; i < hd; ++i) s += q[size_t(hoff + i)] * k_cur[hoff + i];
                        scores[size_t(pos)] = s * inv_sqrt;
                    }
                    softmax_inplace(scores);
                    for (int32_t i = 0; i < hd; ++i) attn_out[size_t(hoff + i)] = 0.0f;
                    for (int64_t t = 0; t < pos; ++t) {
                        const float* vt = past.data() + size_t(t) * per_tok + size_t(layer) * 2 * d + d + hoff;
                        const float a = scores[size_t(t)];
                        for (int32_t i = 0; i < hd; ++i) attn_out[size_t(hoff + i)] += a * vt[i];
                    }
                    const float a = scores[size_t(pos)];
                    for (int32_t i = 0; i < hd; ++i) attn_out[size_t(hoff + i)] += a * v_cur[hoff + i];
                }

                project(w, adapters, layer, LORA_O, attn_out, proj, lora_scratch);
                for (int32_t i = 0; i < d; ++i) h[size_t(i)] += proj[size_t(i)];

                layernorm(h, lp.ln2_gain, lp.ln2_bias, normed);
                matvec(w.ffn1(size_t(layer)), normed, std::span<float>(ffn_mid));
                for (float& v : ffn_mid) v = gelu(v);
                matvec(w.ffn2(size_t(layer)), ffn_mid, std::span<float>(proj));
                for (int32_t i = 0; i < d; ++i) h[size_t(i)] += proj[size_t(i)];
            }

            if (!stream.try_append(token_kv)) {
                result.status = ForwardStatus::OutOfPages;
                return result;
            }
            ++result.positions_written;

            if (want_logits && pos == total - 1) {
                result.logits.resize(size_t(cfg_.vocab.total_size()));
                matvec(w.out_proj(), h, std::span<float>(result.logits));
            }
        }
        return result;
    }

    template <class WeightView>
    void project(const WeightView& w, const AdapterStack& adapters, int32_t layer, int target,
                 std::span<const float> x, std::span<float> y, std::span<float> scratch) const {
        matvec(w.attn(size_t(layer), target), x, y);
        for (const auto& ad : adapters) {
            if (ad) ad->apply(layer, target, x, y, scratch);
        }
    }

    static double log_softmax_at(std::span<const float> logits, TokenId id) {
        double mx = -HUGE_VAL;
        for (float v : logits) mx = std::max(mx, double(v));
        double sum = 0.0;
        for (float v : logits) sum += std::exp(double(v) - mx);
        return double(logits[size_t(id)]) - mx - std::log(sum);
    }

    ModelConfig cfg_;
    Parameters params_;
    std::optional<QuantParams> quant_;
};

struct DecodeResult {
    CodecSeq codec;                  // generated codec ids, E excluded
    std::vector<TokenId> generated;  // everything fed back, in order
    int64_t foreign_count = 0;       // generated ids that are neither codec nor E
    bool terminated = false;         // E was emitted
    bool out_of_pages = false;       // pool exhausted before finishing
};

// Autoregressive decode from an inference prefix (must end at S). Non-codec,
// non-E generations are recorded and decoding continues; they are bad-case
// signals rather than errors.
inline DecodeResult decode(const Model& model, const AdapterStack& adapters,
                           const ComposedSequence& prefix, const Matrix& cond,
                           const DecodeParams& dp, KvStream& stream, bool use_quant = false) {
    if (prefix.token_ids.empty() || prefix.token_ids.back() != TOK_S) {
        throw std::invalid_argument("decode: prefix must end at S");
    }
    const VocabLayout& vocab = model.config().vocab;
    DecodeResult out;
    SplitMix64 rng(dp.rng_seed);

    std::vector<TokenId> tokens = prefix.token_ids;
    auto step = model.forward(adapters, cond, tokens, stream, /*want_logits=*/true, use_quant);
    if (step.status == ForwardStatus::OutOfPages) {
        out.out_of_pages = true;
        return out;
    }
    for (int32_t n = 0; n < dp.max_new_tokens; ++n) {
        const TokenId next = dp.mode == DecodeParams::Mode::Greedy
                                 ? greedy_step(step.logits)
                                 : sample_step(step.logits, dp, rng);
        if (next == TOK_E) {
            out.terminated = true;
            break;
        }
        out.generated.push_back(next);
        if (vocab.is_codec(next)) {
            out.codec.ids.push_back(next);
        } else {
            ++out.foreign_count;
        }
        tokens.push_back(next);
        step = model.forward(adapters, cond, tokens, stream, /*want_logits=*/true, use_quant);
        if (step.status == ForwardStatus::OutOfPages) {
            out.out_of_pages = true;
            return out;
        }
    }
    return out;
}

} // namespace takin
