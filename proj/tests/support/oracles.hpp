// Test-side reference implementations. These stay independent of the
// library paths they check: the contiguous cache is the oracle for the
// paged cache, the dense merge is the oracle for factored LoRA application,
// and the plain DP is the oracle for the backtraced PER alignment.
#pragma once

#include <algorithm>
#include <cstring>
#include <span>
#include <vector>

#include "takin/kvcache.hpp"
#include "takin/lora.hpp"
#include "takin/model.hpp"
#include "takin/vocab.hpp"

namespace takin::testing {

// Flat contiguous KV backing, optionally capacity-limited to mimic pool
// exhaustion.
class ContiguousKvStream final : public KvStream {
public:
    explicit ContiguousKvStream(int64_t elems_per_token, int64_t max_tokens = -1)
        : elems_(elems_per_token), max_tokens_(max_tokens) {}

    bool try_append(std::span<const float> token_kv) override {
        if (max_tokens_ >= 0 && size() >= max_tokens_) return false;
        buf_.insert(buf_.end(), token_kv.begin(), token_kv.end());
        return true;
    }

    std::span<const float> gather(int64_t upto) override {
        return {buf_.data(), size_t(upto) * size_t(elems_)};
    }

    int64_t size() const override { return int64_t(buf_.size()) / elems_; }

    const std::vector<float>& raw() const { return buf_; }

private:
    int64_t elems_;
    int64_t max_tokens_;
    std::vector<float> buf_;
};

// Dense-merge oracle: explicit W' = W + sum (alpha/r) B A per attention
// projection, materialized into a Parameters copy so the base model path
// (no adapters) reproduces the adapter stack.
inline Parameters merge_adapters_dense(const Parameters& base, const ModelConfig& cfg,
                                       const AdapterStack& adapters) {
    Parameters merged = base;
    for (int32_t layer = 0; layer < cfg.n_layers; ++layer) {
        for (int target = 0; target < LORA_TARGET_COUNT; ++target) {
            Matrix* w = nullptr;
            switch (target) {
                case LORA_Q: w = &merged.layers[size_t(layer)].wq; break;
                case LORA_K: w = &merged.layers[size_t(layer)].wk; break;
                case LORA_V: w = &merged.layers[size_t(layer)].wv; break;
                default: w = &merged.layers[size_t(layer)].wo; break;
            }
            for (const auto& ad : adapters) {
                if (!ad || ad->rank == 0) continue;
                const LoraFactors& f = ad->layers[size_t(layer)][size_t(target)];
                const float s = ad->alpha / float(ad->rank);
                for (int32_t r = 0; r < w->rows; ++r) {
                    for (int32_t c = 0; c < w->cols; ++c) {
                        float acc = 0.0f;
                        for (int32_t k = 0; k < ad->rank; ++k) {
                            acc += f.b.at(r, k) * f.a.at(k, c);
                        }
                        w->at(r, c) += s * acc;
                    }
                }
            }
        }
    }
    return merged;
}

// Distance-only Levenshtein, written differently from the library's
// backtraced version (rolling rows, no traceback).
inline int64_t naive_edit_distance(std::span<const TokenId> a, std::span<const TokenId> b) {
    std::vector<int64_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = int64_t(j);
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = int64_t(i);
        for (size_t j = 1; j <= b.size(); ++j) {
            const int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            const int64_t del = prev[j] + 1;
            const int64_t ins = cur[j - 1] + 1;
            cur[j] = std::min({sub, del, ins});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

} // namespace takin::testing
